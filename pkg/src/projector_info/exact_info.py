"""Exact Shannon quantities on small discrete chains Y -> X -> Z1 -> Z2 -> R.

All logarithms are natural (nats). A :class:`JointChain` stores the label prior
and the four channels; the full five-way joint is materialised lazily (at most
8**5 cells) and every bound is evaluated on exact marginals of it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

PMF_TOL = 1e-12
CHAIN_TOL = 1e-10
SLACK_TOL = 1e-9
LEMMA_CMI_TOL = 1e-12
LEMMA_DPI_TOL = 1e-10
MAX_ALPHABET = 8

VARS = ("y", "x", "z1", "z2", "r")


class InfoError(ValueError):
    pass


class InvalidPmf(InfoError):
    pass


class InvalidChain(InfoError):
    pass


class SizeOutOfRange(InfoError):
    pass


def _check_pmf(p, tol: float = PMF_TOL) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.size == 0 or not np.all(np.isfinite(p)) or np.any(p < 0):
        raise InvalidPmf("probabilities must be finite and non-negative")
    if abs(p.sum() - 1.0) > tol:
        raise InvalidPmf(f"probabilities sum to {p.sum()!r}, not 1")
    return p


@dataclass(frozen=True)
class Pmf:
    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "probs", _check_pmf(self.probs).ravel().copy())

    def __len__(self):
        return self.probs.size


@dataclass(frozen=True)
class Channel:
    """Row-stochastic matrix ``rows[i, j] = P(out=j | in=i)``."""

    rows: np.ndarray

    def __post_init__(self):
        rows = np.array(self.rows, dtype=np.float64)
        if rows.ndim != 2:
            raise InvalidPmf("channel must be a 2-D row-stochastic matrix")
        for row in rows:
            _check_pmf(row)
        object.__setattr__(self, "rows", rows)

    @property
    def in_size(self) -> int:
        return self.rows.shape[0]

    @property
    def out_size(self) -> int:
        return self.rows.shape[1]


def entropy(p) -> float:
    """Shannon entropy in nats with the convention 0 log 0 = 0."""
    p = _check_pmf(p).ravel()
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz)))


def mutual_information(joint) -> float:
    """I(A;B) for a 2-D joint pmf, as H(A) + H(B) - H(A,B), clamped at 0."""
    joint = _check_pmf(joint)
    if joint.ndim != 2:
        raise InvalidPmf("joint pmf must be 2-D")
    mi = entropy(joint.sum(axis=1)) + entropy(joint.sum(axis=0)) - entropy(joint)
    return max(mi, 0.0)


def conditional_mi(joint3) -> float:
    """I(A;B|C) for a pmf indexed ``[a, b, c]``.

    Evaluated as the expected log-ratio p(a,b,c) p(c) / (p(a,c) p(b,c)) rather
    than as a difference of entropies, so it is exactly zero (up to a few ulps)
    when the joint factorises through C.
    """
    p = _check_pmf(joint3)
    if p.ndim != 3:
        raise InvalidPmf("joint pmf must be 3-D")
    p_c = p.sum(axis=(0, 1))
    p_ac = p.sum(axis=1)
    p_bc = p.sum(axis=0)
    num = p * p_c[None, None, :]
    den = p_ac[:, None, :] * p_bc[None, :, :]
    mask = p > 0
    cmi = float(np.sum(p[mask] * np.log(num[mask] / den[mask])))
    return max(cmi, 0.0)


@dataclass(frozen=True)
class JointChain:
    p_y: Pmf
    ch_yx: Channel
    ch_xz1: Channel
    ch_z1z2: Channel
    ch_z2r: Channel

    def __post_init__(self):
        sizes = [len(self.p_y)]
        for ch in (self.ch_yx, self.ch_xz1, self.ch_z1z2, self.ch_z2r):
            if ch.in_size != sizes[-1]:
                raise InvalidChain(
                    f"channel input size {ch.in_size} does not match previous alphabet {sizes[-1]}"
                )
            sizes.append(ch.out_size)
        if abs(self.joint.sum() - 1.0) > CHAIN_TOL:
            raise InvalidChain("induced joint does not sum to 1")

    @property
    def sizes(self) -> tuple[int, ...]:
        return self.joint.shape

    @cached_property
    def joint(self) -> np.ndarray:
        return np.einsum(
            "y,yx,xa,ab,br->yxabr",
            self.p_y.probs,
            self.ch_yx.rows,
            self.ch_xz1.rows,
            self.ch_z1z2.rows,
            self.ch_z2r.rows,
        )

    def marginal(self, *names: str) -> np.ndarray:
        """Joint pmf of the named variables, axes in the order given."""
        idx = [VARS.index(n) for n in names]
        drop = tuple(i for i in range(5) if i not in idx)
        m = self.joint.sum(axis=drop)
        kept = sorted(idx)
        return np.moveaxis(m, [kept.index(i) for i in idx], range(len(idx)))

    def mi(self, a: str, b: str) -> float:
        return mutual_information(self.marginal(a, b))

    def h(self, a: str) -> float:
        return entropy(self.marginal(a))

    def cmi(self, a: str, b: str, given: str) -> float:
        return conditional_mi(self.marginal(a, b, given))


def make_chain(p_y, ch_yx, ch_xz1, ch_z1z2, ch_z2r) -> JointChain:
    return JointChain(Pmf(p_y), Channel(ch_yx), Channel(ch_xz1), Channel(ch_z1z2), Channel(ch_z2r))


def identity_chain(m: int) -> JointChain:
    """Uniform Y copied unchanged through every channel."""
    eye = np.eye(m)
    return make_chain(np.full(m, 1.0 / m), eye, eye, eye, eye)


def sample_chain(sizes, seed) -> JointChain:
    """Random chain with every pmf drawn from a symmetric Dirichlet(1)."""
    sizes = tuple(int(s) for s in sizes)
    if len(sizes) != 5:
        raise SizeOutOfRange("need five alphabet sizes (|Y|, |X|, |Z1|, |Z2|, |R|)")
    if any(s < 1 or s > MAX_ALPHABET for s in sizes):
        raise SizeOutOfRange(f"alphabet sizes must lie in [1, {MAX_ALPHABET}], got {sizes}")
    rng = np.random.default_rng(seed)

    def draw(k, rows=None):
        out = rng.dirichlet(np.ones(k), size=rows)
        # a one-point simplex can come back as 1 - ulp
        return np.ones_like(out) if k == 1 else out

    p_y = draw(sizes[0])
    channels = [draw(b, a) for a, b in zip(sizes[:-1], sizes[1:])]
    return make_chain(p_y, *channels)


@dataclass
class BoundReport:
    theorem_id: str
    lhs: float
    rhs: float
    slack: float
    term_breakdown: dict[str, float] = field(default_factory=dict)

    def passed(self, tol: float = SLACK_TOL) -> bool:
        return self.slack >= -tol


def _valid(c) -> JointChain:
    if not isinstance(c, JointChain):
        raise InvalidChain(f"expected a JointChain, got {type(c).__name__}")
    return c


def check_theorem1(c: JointChain) -> BoundReport:
    """Lower bound I(Y;Z1) >= I(Z1;R) - I(Z1;Z2) + I(R;Y)."""
    c = _valid(c)
    t = {
        "I(Y;Z1)": c.mi("y", "z1"),
        "I(Z1;R)": c.mi("z1", "r"),
        "I(Z1;Z2)": c.mi("z1", "z2"),
        "I(R;Y)": c.mi("r", "y"),
    }
    lhs = t["I(Y;Z1)"]
    rhs = t["I(Z1;R)"] - t["I(Z1;Z2)"] + t["I(R;Y)"]
    return BoundReport("theorem1", lhs, rhs, lhs - rhs, t)


def check_theorem2(c: JointChain) -> BoundReport:
    """Upper bound I(Y;Z1) <= I(Y;Z2) - I(Z1;Z2) + H(Z1)."""
    c = _valid(c)
    t = {
        "I(Y;Z1)": c.mi("y", "z1"),
        "I(Y;Z2)": c.mi("y", "z2"),
        "I(Z1;Z2)": c.mi("z1", "z2"),
        "H(Z1)": c.h("z1"),
    }
    lhs = t["I(Y;Z1)"]
    rhs = t["I(Y;Z2)"] - t["I(Z1;Z2)"] + t["H(Z1)"]
    return BoundReport("theorem2", lhs, rhs, rhs - lhs, t)


def check_theorem3(c: JointChain) -> BoundReport:
    """Discretisation bound I(Y;Z1) >= -H(Z2) + I(Z2;R) + I(R;Y)."""
    c = _valid(c)
    t = {
        "I(Y;Z1)": c.mi("y", "z1"),
        "H(Z2)": c.h("z2"),
        "I(Z2;R)": c.mi("z2", "r"),
        "I(R;Y)": c.mi("r", "y"),
    }
    lhs = t["I(Y;Z1)"]
    rhs = -t["H(Z2)"] + t["I(Z2;R)"] + t["I(R;Y)"]
    return BoundReport("theorem3", lhs, rhs, lhs - rhs, t)


@dataclass
class LemmaReport:
    cmi_y_r_given_z1: float
    cmi_y_z2_given_z1: float
    dpi_z1z2_minus_z1r: float
    dpi_z2r_minus_z1r: float

    @property
    def passed(self) -> bool:
        return (
            abs(self.cmi_y_r_given_z1) <= LEMMA_CMI_TOL
            and abs(self.cmi_y_z2_given_z1) <= LEMMA_CMI_TOL
            and self.dpi_z1z2_minus_z1r >= -LEMMA_DPI_TOL
            and self.dpi_z2r_minus_z1r >= -LEMMA_DPI_TOL
        )


def check_lemmas(c: JointChain) -> LemmaReport:
    """Conditional independences and data-processing inequalities of the chain."""
    c = _valid(c)
    i_z1_r = c.mi("z1", "r")
    return LemmaReport(
        cmi_y_r_given_z1=c.cmi("y", "r", "z1"),
        cmi_y_z2_given_z1=c.cmi("y", "z2", "z1"),
        dpi_z1z2_minus_z1r=c.mi("z1", "z2") - i_z1_r,
        dpi_z2r_minus_z1r=c.mi("z2", "r") - i_z1_r,
    )


THEOREMS = {
    "theorem1": check_theorem1,
    "theorem2": check_theorem2,
    "theorem3": check_theorem3,
}


def chain_sizes_for(chain_id: int, max_alphabet: int, seed: int) -> tuple[int, ...]:
    """Alphabet sizes for the ``chain_id``-th chain of a verification run.

    Sizes are uniform on ``[2, max_alphabet]`` (or all 1 when the cap is 1).
    """
    lo = min(2, max_alphabet)
    rng = np.random.default_rng([seed, chain_id, 0])
    return tuple(int(s) for s in rng.integers(lo, max_alphabet + 1, size=5))


def chain_seed(chain_id: int, seed: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, chain_id, 1])


def random_verification_chain(chain_id: int, max_alphabet: int, seed: int) -> JointChain:
    return sample_chain(chain_sizes_for(chain_id, max_alphabet, seed), chain_seed(chain_id, seed))
