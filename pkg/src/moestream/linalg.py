"""Dense layout primitives and quadratic curvature bounds for softmax models.

Vectorization is column-major everywhere: ``vec`` stacks matrix columns top
to bottom, so vec(A B C) = (C^T kron A) vec(B) on conforming shapes.  The
curvature bounds dominate the Hessian of the log-partition function of a
constrained softmax, which is what makes fixed quadratic majorizers valid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ShapeError, SolverError

PSD_TOL = 1e-10


def vec(a):
    """Column-major flattening of a 2-d array."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise ShapeError(f"vec expects a matrix, got ndim={a.ndim}")
    return a.reshape(-1, order="F")


def mat(v, rows, cols):
    """Inverse of :func:`vec`: reshape a vector into a ``rows x cols`` matrix."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size != rows * cols:
        raise ShapeError(f"cannot reshape length-{v.size} vector to {rows}x{cols}")
    return v.reshape((rows, cols), order="F")


def mat_square(v):
    """Reshape a length-n^2 vector into the n x n matrix it vectorizes."""
    v = np.asarray(v, dtype=float)
    n = round(np.sqrt(v.size))
    if n * n != v.size:
        raise ShapeError(f"length {v.size} is not a perfect square")
    return mat(v, n, n)


def kron(a, b):
    """Kronecker product (delegates to numpy)."""
    return np.kron(np.asarray(a, dtype=float), np.asarray(b, dtype=float))


def bdiag_extract(a, t):
    """Stack the t x t diagonal blocks of a (n t) x (n t) matrix into (n t) x t."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError("bdiag_extract expects a square matrix")
    if a.shape[0] % t != 0:
        raise ShapeError(f"side {a.shape[0]} not divisible by block size {t}")
    n = a.shape[0] // t
    out = np.empty((n * t, t))
    for i in range(n):
        out[i * t : (i + 1) * t] = a[i * t : (i + 1) * t, i * t : (i + 1) * t]
    return out


def bdiag_inverse(b):
    """Place stacked t x t blocks back on a block diagonal (zeros elsewhere)."""
    b = np.asarray(b, dtype=float)
    if b.ndim != 2:
        raise ShapeError("bdiag_inverse expects a stacked-block matrix")
    t = b.shape[1]
    if b.shape[0] % t != 0:
        raise ShapeError(f"row count {b.shape[0]} not divisible by block size {t}")
    n = b.shape[0] // t
    out = np.zeros((n * t, n * t))
    for i in range(n):
        out[i * t : (i + 1) * t, i * t : (i + 1) * t] = b[i * t : (i + 1) * t]
    return out


def sym(a):
    """Symmetrize, absorbing round-off before spectral operations."""
    a = np.asarray(a, dtype=float)
    return (a + a.T) / 2.0


def min_eigenvalue(a):
    return float(np.linalg.eigvalsh(sym(a))[0])


def max_eigenvalue(a):
    return float(np.linalg.eigvalsh(sym(a))[-1])


def is_psd(a, tol=PSD_TOL):
    return min_eigenvalue(a) >= -tol


def bohning_classic_bound(dim):
    """Fixed matrix dominating diag(p) - p p^T for every stochastic vector p.

    Returns (1/2)(I - 11^T / dim).
    """
    if dim < 1:
        raise ValueError("dimension must be >= 1")
    eye = np.eye(dim)
    ones = np.ones((dim, dim))
    return 0.5 * (eye - ones / dim)


def bohning_corrected_bound(dim):
    """Fixed matrix dominating diag(p) - p p^T for sub-stochastic positive p.

    Valid when the entries of p lie in (0, 1) and sum to less than one, the
    situation produced by a softmax with a pinned reference category.
    Returns (3/4) I - 11^T / (2 dim).
    """
    if dim < 1:
        raise ValueError("dimension must be >= 1")
    eye = np.eye(dim)
    ones = np.ones((dim, dim))
    return 0.75 * eye - ones / (2.0 * dim)


@dataclass(frozen=True)
class CurvatureBoundSpec:
    """Ingredients of the quadratic curvature majorizer B.

    ``block_count`` is the number of free softmax categories, ``feature_vec``
    the per-sample feature vector the bound is built on, and ``epsilon_star``
    the small ridge that keeps B strictly positive definite.
    """

    block_count: int
    feature_vec: np.ndarray = field(repr=False)
    epsilon_star: float = 1e-6

    def __post_init__(self):
        if self.epsilon_star <= 0:
            raise ValueError("epsilon_star must be positive")
        if self.block_count < 0:
            raise ValueError("block_count must be nonnegative")
        fv = np.asarray(self.feature_vec, dtype=float)
        if fv.ndim != 1:
            raise ShapeError("feature_vec must be a vector")
        object.__setattr__(self, "feature_vec", fv)


def build_curvature_bound(spec: CurvatureBoundSpec):
    """Assemble B = bound(block_count) kron (x x^T) + epsilon_star I.

    B is symmetric positive definite and dominates the softmax log-partition
    Hessian evaluated at any coefficient vector, which is the property the
    streaming updates rely on.  ``block_count == 0`` yields an empty matrix.
    """
    b = spec.block_count
    x = spec.feature_vec
    if b == 0:
        return np.zeros((0, 0))
    outer = np.outer(x, x)
    bound = kron(bohning_corrected_bound(b), outer)
    bound[np.diag_indices_from(bound)] += spec.epsilon_star
    return bound


# Kept as an alias because the rest of the package talks about "B".
build_B = build_curvature_bound


def eigenvalue_envelope(b):
    """Diagnostic constant M0 with all eigenvalues of b inside (1/M0, M0)."""
    lo = min_eigenvalue(b)
    hi = max_eigenvalue(b)
    if lo <= 0:
        raise ValueError("matrix must be positive definite")
    return max(1.0 / lo, hi) * (1 + 1e-12)


def solve_psd(a, rhs, *, rcond=1e-10, rtol=1e-6, atol=1e-9, name="matrix"):
    """Solve a x = rhs for symmetric PSD ``a`` via its eigenfactorization.

    Eigencomponents below ``rcond * lambda_max`` are treated as an exact null
    space (min-norm solution); duplicate degree-0 feature columns make such
    null spaces structural rather than exceptional here.  If the right-hand
    side has significant mass outside the numerical range, the system is
    genuinely inconsistent and a :class:`SolverError` naming the block is
    raised.
    """
    a = sym(a)
    rhs = np.asarray(rhs, dtype=float)
    if a.shape[0] == 0:
        return np.zeros(0)
    w, v = np.linalg.eigh(a)
    lam_max = w[-1]
    if lam_max <= 0:
        raise SolverError("matrix is not positive semidefinite", block=name)
    keep = w > rcond * lam_max
    coeffs = v.T @ rhs
    x = v[:, keep] @ (coeffs[keep] / w[keep])
    residual = a @ x - rhs
    if np.max(np.abs(residual)) > max(atol, rtol * np.max(np.abs(rhs), initial=0.0)):
        raise SolverError("singular system beyond conditioning threshold", block=name)
    return x
