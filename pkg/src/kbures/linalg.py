"""Dense kernels for small symmetric and positive-semidefinite matrices.

Every function accepts a single ``(n, n)`` matrix or a stack ``(..., n, n)``
and operates on the trailing two axes. Matrices here are tiny (n <= 4), so
everything goes through a direct spectral decomposition.
"""

import numpy as np

from .errors import DomainError, InputError

SYM_TOL = 1e-12
PSD_TOL = 1e-10

_FUNCTIONS = {
    "sqrt": np.sqrt,
    "log": np.log,
    "exp": np.exp,
    "inv": np.reciprocal,
}


def _as_square(A, name="A"):
    A = np.asarray(A, dtype=float)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise InputError(f"{name} must have shape (..., n, n), got {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InputError(f"{name} has non-finite entries")
    return A


def sym(A):
    """Symmetric part ``(A + A^T) / 2`` over the trailing axes."""
    return 0.5 * (A + np.swapaxes(A, -1, -2))


def frob(A):
    """Frobenius norm over the trailing two axes."""
    return np.sqrt(np.sum(np.asarray(A) ** 2, axis=(-2, -1)))


def is_symmetric(A, tol=SYM_TOL):
    A = np.asarray(A, dtype=float)
    asym = np.max(np.abs(A - np.swapaxes(A, -1, -2)), axis=(-2, -1))
    return asym <= tol * (1.0 + np.max(np.abs(A), axis=(-2, -1)))


def check_symmetric(A, name="A"):
    A = _as_square(A, name)
    if not np.all(is_symmetric(A)):
        raise InputError(f"{name} is not symmetric")
    return A


def min_eigenvalue(A):
    return np.linalg.eigvalsh(sym(np.asarray(A, dtype=float)))[..., 0]


def is_psd(A, tol=PSD_TOL):
    """Elementwise PSD test ``lambda_min >= -tol * max(1, lambda_max)``."""
    w = np.linalg.eigvalsh(sym(np.asarray(A, dtype=float)))
    return w[..., 0] >= -tol * np.maximum(1.0, w[..., -1])


def sym_eigen(A):
    """Eigen-decomposition of a symmetric matrix.

    Returns
    -------
    w : ndarray, shape (..., n)
        Eigenvalues in descending order.
    V : ndarray, shape (..., n, n)
        Orthonormal eigenvectors as columns, ``A = V diag(w) V^T``.
    """
    A = check_symmetric(A)
    w, V = np.linalg.eigh(sym(A))
    return w[..., ::-1], V[..., ::-1]


def _recompose(w, V):
    return np.einsum("...ij,...j,...kj->...ik", V, w, V)


def psd_apply_fn(P, f):
    """Apply a scalar function to the spectrum: ``V diag(f(w)) V^T``.

    ``f`` is one of ``"sqrt"``, ``"log"``, ``"exp"``, ``"inv"``. Negative
    eigenvalues within ``-1e-10 * lambda_max`` are clamped to zero before a
    square root; ``log`` and ``inv`` require a positive-definite input.
    """
    if f not in _FUNCTIONS:
        raise InputError(f"unknown spectral function {f!r}")
    P = check_symmetric(P, "P")
    w, V = np.linalg.eigh(sym(P))
    if f == "sqrt":
        floor = -PSD_TOL * np.maximum(1.0, w[..., -1:])
        if np.any(w < floor):
            raise DomainError("sqrt of an indefinite matrix", lambda_min=float(np.min(w[..., 0])))
        w = np.clip(w, 0.0, None)
    elif f in ("log", "inv") and np.any(w[..., 0] <= 0.0):
        raise DomainError(f"{f} of a singular matrix", lambda_min=float(np.min(w[..., 0])))
    return _recompose(_FUNCTIONS[f](w), V)


def psd_project(A):
    """Nearest PSD matrix in Frobenius norm (negative eigenvalues set to zero)."""
    w, V = np.linalg.eigh(sym(np.asarray(A, dtype=float)))
    return _recompose(np.clip(w, 0.0, None), V)


def lyapunov_solve(P, Xi):
    """Solve ``P U + U P = 2 Xi`` for symmetric ``U`` with ``P`` positive-definite."""
    P = check_symmetric(P, "P")
    Xi = check_symmetric(Xi, "Xi")
    w, V = np.linalg.eigh(sym(P))
    if np.any(w[..., 0] <= 0.0):
        raise DomainError("Lyapunov solve needs a positive-definite P", lambda_min=float(np.min(w[..., 0])))
    Vt = np.swapaxes(V, -1, -2)
    Xr = Vt @ Xi @ V
    Ur = 2.0 * Xr / (w[..., :, None] + w[..., None, :])
    return sym(V @ Ur @ Vt)


def riccati_solve(P0, P1):
    """Positive solution ``X`` of ``X P0 X = P1``.

    Computed as ``P0^{-1/2} (P0^{1/2} P1 P0^{1/2})^{1/2} P0^{-1/2}``.
    """
    P0 = check_symmetric(P0, "P0")
    P1 = check_symmetric(P1, "P1")
    if P0.shape != P1.shape:
        raise InputError(f"shape mismatch {P0.shape} vs {P1.shape}")
    w, V = np.linalg.eigh(sym(P0))
    if np.any(w[..., 0] <= 0.0):
        raise DomainError("Riccati solve needs a positive-definite P0", lambda_min=float(np.min(w[..., 0])))
    s = np.sqrt(w)
    half = _recompose(s, V)
    ihalf = _recompose(1.0 / s, V)
    middle = psd_apply_fn(sym(half @ P1 @ half), "sqrt")
    return sym(ihalf @ middle @ ihalf)
