"""Dense float64 linear algebra used by the estimators.

Matrices are plain ``numpy.ndarray`` objects of dtype float64. The helpers here
validate shapes and finiteness, build Gram kernels of row-normalised features
and provide a Jacobi eigensolver for symmetric matrices.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

ZERO_ROW_THRESHOLD = 1e-30
UNIT_ROW_TOL = 1e-9
SYMMETRY_TOL = 1e-9
KERNEL_TOL = 1e-12
PSD_SLACK = 1e-9

JACOBI_MAX_SWEEPS = 50
JACOBI_REL_TOL = 1e-11
DENSE_ROTATION_MAX = 64


class TensorError(ValueError):
    """Base class for numeric-substrate errors."""


class NonFiniteError(TensorError):
    pass


class ZeroRow(TensorError):
    pass


class NotNormalized(TensorError):
    pass


class DimMismatch(TensorError):
    pass


class NotSymmetric(TensorError):
    pass


class NoConvergence(TensorError):
    pass


class InvalidKernel(TensorError):
    pass


def as_matrix(data, *, name: str = "matrix") -> np.ndarray:
    """Coerce ``data`` to a finite 2-D float64 array (copying)."""
    m = np.array(data, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise DimMismatch(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NonFiniteError(f"{name} contains NaN or Inf")
    return m


def row_normalize(m) -> np.ndarray:
    """Scale every row to unit L2 norm.

    Raises:
        ZeroRow: if any row norm is below ``ZERO_ROW_THRESHOLD``.
    """
    m = as_matrix(m)
    norms = np.sqrt(np.einsum("ij,ij->i", m, m))
    bad = np.flatnonzero(norms < ZERO_ROW_THRESHOLD)
    if bad.size:
        raise ZeroRow(f"row {int(bad[0])} has (near) zero norm")
    return m / norms[:, None]


def gram(z_normalized, *, allow_zero_rows: bool = False) -> np.ndarray:
    """Gram kernel ``Z Z^T`` of unit-norm rows, with the diagonal pinned to 1.

    With ``allow_zero_rows`` an all-zero row is accepted and acts as a sample
    orthogonal to every other one (its kernel row becomes a unit basis vector);
    this keeps the kernel PSD with unit diagonal for degenerate quantised codes.
    """
    z = as_matrix(z_normalized)
    norms = np.sqrt(np.einsum("ij,ij->i", z, z))
    off = np.abs(norms - 1.0) > UNIT_ROW_TOL
    if allow_zero_rows:
        off &= norms != 0.0
    if np.any(off):
        i = int(np.flatnonzero(off)[0])
        raise NotNormalized(f"row {i} has norm {norms[i]!r}, expected 1")
    g = z @ z.T
    g = 0.5 * (g + g.T)
    np.fill_diagonal(g, 1.0)
    return g


def check_kernel(g, *, check_psd: bool = True) -> np.ndarray:
    """Validate the Gram-kernel invariants and return ``g`` as an array."""
    g = as_matrix(g, name="kernel")
    n, m = g.shape
    if n != m:
        raise InvalidKernel(f"kernel must be square, got {g.shape}")
    if np.max(np.abs(np.diag(g) - 1.0), initial=0.0) > KERNEL_TOL:
        raise InvalidKernel("kernel diagonal must be 1")
    if np.max(np.abs(g - g.T), initial=0.0) > KERNEL_TOL:
        raise InvalidKernel("kernel must be symmetric")
    if check_psd and n:
        lam = sym_eigvals(g)
        if lam[0] < -PSD_SLACK:
            raise InvalidKernel(f"kernel is not PSD (min eigenvalue {lam[0]:.3e})")
    return g


def hadamard(a, b, *, check_psd: bool = False) -> np.ndarray:
    """Entrywise product of two kernels of equal size.

    The Schur product of PSD matrices is PSD; ``check_psd`` re-verifies it
    numerically with the eigensolver.
    """
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape != b.shape:
        raise DimMismatch(f"shapes differ: {a.shape} vs {b.shape}")
    out = a * b
    if check_psd and out.shape[0]:
        lam = sym_eigvals(out)
        if lam[0] < -PSD_SLACK:
            raise InvalidKernel(f"Hadamard product lost PSD (min eig {lam[0]:.3e})")
    return out


@lru_cache(maxsize=128)
def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    # Circle-method tournament: n-1 rounds of n/2 disjoint (p, q) pairs that
    # together cover every off-diagonal position once per sweep.
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        pairs = [(players[i], players[m - 1 - i]) for i in range(m // 2)]
        pairs = [(min(p, q), max(p, q)) for p, q in pairs if p < n and q < n]
        if pairs:
            p, q = zip(*pairs)
            rounds.append((np.array(p), np.array(q)))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def _off_norm(a: np.ndarray) -> float:
    off = a[~np.eye(a.shape[0], dtype=bool)]
    return float(np.sqrt(np.dot(off, off)))


def sym_eigvals(a, *, max_sweeps: int = JACOBI_MAX_SWEEPS, rel_tol: float = JACOBI_REL_TOL) -> np.ndarray:
    """Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.

    Each sweep visits every off-diagonal pair once, grouped into rounds of
    disjoint pairs so a whole round is applied with vectorised row/column
    updates. Iteration stops once the off-diagonal Frobenius norm is at most
    ``rel_tol`` times the Frobenius norm of the input.

    Raises:
        NotSymmetric: if ``|a - a.T|`` exceeds 1e-9 anywhere.
        NoConvergence: if ``max_sweeps`` sweeps are not enough.
    """
    a = as_matrix(a)
    n, m = a.shape
    if n != m:
        raise NotSymmetric(f"matrix must be square, got {a.shape}")
    if n > 4096:
        raise DimMismatch("sym_eigvals supports n <= 4096")
    if np.max(np.abs(a - a.T), initial=0.0) > SYMMETRY_TOL:
        raise NotSymmetric("matrix is not symmetric within 1e-9")
    a = 0.5 * (a + a.T)
    if n <= 1:
        return np.diag(a).copy()

    target = rel_tol * float(np.linalg.norm(a))
    rounds = _round_robin(n)
    # small matrices: one dense rotation per round beats per-row fancy indexing
    dense = n <= DENSE_ROTATION_MAX
    eye = np.eye(n)
    skip = target / n
    for _ in range(max_sweeps):
        if _off_norm(a) <= target:
            return np.sort(np.diag(a))
        for p, q in rounds:
            apq = a[p, q]
            # entries below target/n cannot keep the off-norm above target
            if np.max(np.abs(apq)) <= skip:
                continue
            app = a[p, p]
            aqq = a[q, q]
            # t = sgn(theta) / (|theta| + sqrt(theta^2 + 1)) with theta = d / (2 a_pq),
            # rescaled by |2 a_pq| so nothing overflows for tiny a_pq
            d = aqq - app
            two_apq = 2.0 * apq
            den = np.abs(d) + np.hypot(d, two_apq)
            t = np.where(d >= 0.0, two_apq, -two_apq) / np.where(den > 0.0, den, 1.0)
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            # A <- J^T A J with J[p,p]=J[q,q]=c, J[p,q]=s, J[q,p]=-s
            if dense:
                rot = eye.copy()
                rot[p, p] = c
                rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                a = rot.T @ a @ rot
                a[p, q] = 0.0
                a[q, p] = 0.0
                continue
            rp = a[p, :].copy()
            rq = a[q, :]
            a[p, :] = c[:, None] * rp - s[:, None] * rq
            a[q, :] = s[:, None] * rp + c[:, None] * rq
            cp = a[:, p].copy()
            cq = a[:, q]
            a[:, p] = cp * c[None, :] - cq * s[None, :]
            a[:, q] = cp * s[None, :] + cq * c[None, :]
            a[p, q] = 0.0
            a[q, p] = 0.0
    if _off_norm(a) <= target:
        return np.sort(np.diag(a))
    raise NoConvergence(f"Jacobi did not converge in {max_sweeps} sweeps")
