"""Matrix-based Renyi entropy and mutual information of feature kernels.

For a unit-diagonal PSD kernel ``G`` of size ``n`` the order-``alpha`` entropy is
``log(tr((G/n)**alpha)) / (1 - alpha)``; order 1 is the von Neumann limit
``-tr((G/n) log(G/n))``. Mutual information of two kernels on the same samples
is ``H(A) + H(B) - H(A * B)`` with ``*`` the Hadamard product.

Order 2 needs no eigendecomposition, since ``tr((G/n)**2) = ||G||_F**2 / n**2``.
That is the path used for training, and the closed-form gradients below are
written for it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor_core import (
    DimMismatch,
    as_matrix,
    check_kernel,
    gram,
    hadamard,
    sym_eigvals,
    TensorError,
)

DEFAULT_ALPHA = 2.0
EIG_CLAMP = 1e-9
# normalised eigenvalues this small are solver noise; for alpha < 1 they would
# otherwise add up to ~sqrt(noise) each
EIG_FLOOR = 1e-12


class EigFailure(TensorError):
    pass


@dataclass(frozen=True)
class EntropyOrder:
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise ValueError(f"entropy order must be a positive real, got {self.alpha!r}")


def _order(order) -> float:
    if isinstance(order, EntropyOrder):
        return order.alpha
    return EntropyOrder(float(order)).alpha


def entropy_from_eigvals(lam, alpha: float) -> float:
    """Renyi entropy of the normalised spectrum ``lam`` (sums to 1)."""
    lam = np.asarray(lam, dtype=np.float64)
    if np.any(lam < -EIG_CLAMP):
        raise EigFailure(f"kernel has eigenvalue {lam.min():.3e} below clamp threshold")
    lam = np.where(lam > EIG_FLOOR, lam, 0.0)
    if alpha == 1.0:
        nz = lam[lam > 0]
        return float(-np.sum(nz * np.log(nz)))
    return float(np.log(np.sum(lam[lam > 0] ** alpha)) / (1.0 - alpha))


def matrix_entropy(g, order=DEFAULT_ALPHA, *, validate: bool = False) -> float:
    """Matrix-based entropy (nats) of a Gram kernel.

    Args:
        g: unit-diagonal, symmetric PSD kernel.
        order: ``EntropyOrder`` or a positive float. Order 2 uses the Frobenius
            identity; all other orders go through the Jacobi eigensolver.
        validate: run the full kernel check (including a PSD eigen-check).
    """
    alpha = _order(order)
    g = check_kernel(g, check_psd=validate)
    n = g.shape[0]
    if alpha == 2.0:
        return float(-np.log(np.sum(g * g) / (n * n)))
    return matrix_entropy_eig(g, alpha)


def matrix_entropy_eig(g, order=DEFAULT_ALPHA) -> float:
    """Matrix entropy through the eigenvalues, for any order (incl. 2)."""
    alpha = _order(order)
    g = as_matrix(g)
    n = g.shape[0]
    return entropy_from_eigvals(sym_eigvals(g) / n, alpha)


def matrix_entropies(g, orders) -> dict[float, float]:
    """Entropies of one kernel at several orders from a single eigendecomposition."""
    g = check_kernel(g, check_psd=False)
    lam = sym_eigvals(g) / g.shape[0]
    return {_order(a): entropy_from_eigvals(lam, _order(a)) for a in orders}


def matrix_mi(a, b, order=DEFAULT_ALPHA) -> float:
    """Matrix mutual information ``H(A) + H(B) - H(A*B)``; not clamped."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape != b.shape:
        raise DimMismatch(f"kernel sizes differ: {a.shape} vs {b.shape}")
    return matrix_entropy(a, order) + matrix_entropy(b, order) - matrix_entropy(hadamard(a, b), order)


def matrix_mis(a, b, orders) -> dict[float, float]:
    """``matrix_mi`` at several orders, sharing one eigendecomposition per kernel."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape != b.shape:
        raise DimMismatch(f"kernel sizes differ: {a.shape} vs {b.shape}")
    ha, hb, hab = (matrix_entropies(k, orders) for k in (a, b, hadamard(a, b)))
    return {k: ha[k] + hb[k] - hab[k] for k in ha}


def normalize_features(z) -> tuple[np.ndarray, np.ndarray]:
    """Row-normalise ``z``; all-zero rows stay zero. Returns (z_hat, norms)."""
    z = as_matrix(z)
    norms = np.sqrt(np.einsum("ij,ij->i", z, z))
    safe = np.where(norms > 0, norms, 1.0)
    return z / safe[:, None], norms


def feature_kernel(z) -> np.ndarray:
    """Kernel of row-normalised features (all-zero rows become isolated samples)."""
    z_hat, _ = normalize_features(z)
    return gram(z_hat, allow_zero_rows=True)


def backprop_normalize(grad_hat, z_hat, norms) -> np.ndarray:
    # d(z/|z|): project out the radial component and divide by the norm
    radial = np.einsum("ij,ij->i", grad_hat, z_hat)
    safe = np.where(norms > 0, norms, 1.0)
    out = (grad_hat - z_hat * radial[:, None]) / safe[:, None]
    out[norms == 0] = 0.0
    return out


def matrix_entropy_grad_alpha2(z) -> np.ndarray:
    """Gradient of ``H_2(gram(normalize(z)))`` with respect to raw ``z``.

    With ``S = ||G||_F**2`` and ``H = 2 log n - log S``, ``dH/dZhat = -4 G Zhat / S``;
    the row-normalisation Jacobian is then applied.
    """
    z_hat, norms = normalize_features(z)
    g = gram(z_hat, allow_zero_rows=True)
    s = np.sum(g * g)
    grad_hat = -4.0 * (g @ z_hat) / s
    return backprop_normalize(grad_hat, z_hat, norms)


def matrix_mi_alpha2_and_grad(z1, z2) -> tuple[float, np.ndarray, np.ndarray]:
    """Order-2 matrix MI of two raw feature matrices and its two gradients."""
    z1 = as_matrix(z1)
    z2 = as_matrix(z2)
    if z1.shape[0] != z2.shape[0]:
        raise DimMismatch(f"row counts differ: {z1.shape[0]} vs {z2.shape[0]}")
    n = z1.shape[0]
    h1, n1 = normalize_features(z1)
    h2, n2 = normalize_features(z2)
    a = gram(h1, allow_zero_rows=True)
    b = gram(h2, allow_zero_rows=True)
    ab = a * b
    s_a = np.sum(a * a)
    s_b = np.sum(b * b)
    s_ab = np.sum(ab * ab)
    log_n2 = 2.0 * math.log(n)
    mi = (log_n2 - math.log(s_a)) + (log_n2 - math.log(s_b)) - (log_n2 - math.log(s_ab))
    # d log S_ab / dA = 2 A*B*B / S_ab, and dA/dZhat contributes 2 (.) Zhat
    g1 = -4.0 * (a @ h1) / s_a + 4.0 * ((ab * b) @ h1) / s_ab
    g2 = -4.0 * (b @ h2) / s_b + 4.0 * ((ab * a) @ h2) / s_ab
    return mi, backprop_normalize(g1, h1, n1), backprop_normalize(g2, h2, n2)


def matrix_mi_grad_alpha2(z1, z2) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of ``I_2(K(z1); K(z2))`` with respect to the raw features."""
    _, g1, g2 = matrix_mi_alpha2_and_grad(z1, z2)
    return g1, g2


@dataclass
class BoundEstimate:
    """Surrogate estimate of one of the downstream-information bounds.

    ``value`` omits the constant I(R;Y), so values are only comparable within
    a run. ``metadata`` records the conventions used.
    """

    kind: str
    value: float
    terms: dict[str, float]
    metadata: dict[str, object] = field(default_factory=dict)


def estimate_lower_bound(z1, z2, encoder_contrastive_loss: float) -> BoundEstimate:
    """``-loss(Z1) - I_2(Z1; Z2)``: negated encoder loss stands in for I(Z1;R)."""
    if not math.isfinite(encoder_contrastive_loss):
        raise ValueError("encoder contrastive loss must be finite")
    i12 = matrix_mi(feature_kernel(z1), feature_kernel(z2))
    i_r = -float(encoder_contrastive_loss)
    return BoundEstimate(
        kind="lower",
        value=i_r - i12,
        terms={"i_z1_r_surrogate": i_r, "i_z1_z2": i12},
        metadata={"dropped_constant": "I(R;Y)", "i_z1_r_convention": "negated encoder loss"},
    )


def estimate_upper_bound(z1, z2, i_y_z2_surrogate: float) -> BoundEstimate:
    """``I(Y;Z2)_surrogate - I_2(Z1; Z2) + H_2(Z1)``."""
    if not math.isfinite(i_y_z2_surrogate):
        raise ValueError("I(Y;Z2) surrogate must be finite")
    k1 = feature_kernel(z1)
    i12 = matrix_mi(k1, feature_kernel(z2))
    h1 = matrix_entropy(k1)
    return BoundEstimate(
        kind="upper",
        value=float(i_y_z2_surrogate) - i12 + h1,
        terms={"i_y_z2_surrogate": float(i_y_z2_surrogate), "i_z1_z2": i12, "h_z1": h1},
        metadata={"i_y_z2_convention": "negative probe cross-entropy on projector features"},
    )
