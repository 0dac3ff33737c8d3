"""Fourier differentiation on the periodic unit grid.

Fields are laid out as ``(..., *grid.shape, *tensor)``: any leading batch axes
(time), then the ``d`` spatial axes, then ``rank`` trailing tensor axes. The
Nyquist mode of an even grid is given a zero derivative so that derivatives
of real fields stay real and the operator stays skew-adjoint.
"""

import numpy as np


def wavenumbers(n):
    k = 2.0 * np.pi * np.fft.fftfreq(n, d=1.0 / n)
    if n % 2 == 0:
        k[n // 2] = 0.0
    return k


def wavevectors(grid):
    """Wavevector per Fourier cell, shape ``(*grid.shape, d)``."""
    k = wavenumbers(grid.n)
    return np.stack(np.meshgrid(*([k] * grid.d), indexing="ij"), axis=-1)


def derivative(f, axis, grid, rank):
    """Partial derivative along spatial ``axis`` of a field with ``rank`` tensor axes."""
    pos = f.ndim - rank - grid.d + axis
    shape = [1] * f.ndim
    shape[pos] = grid.n
    ik = 1j * wavenumbers(grid.n).reshape(shape)
    return np.fft.ifft(ik * np.fft.fft(f, axis=pos), axis=pos).real


def sym_grad(q, grid):
    """``(grad q)^Sym`` with entries ``(d_j q_i + d_i q_j) / 2``; ``q`` has shape ``(..., *S, d)``."""
    d = grid.d
    J = np.stack([derivative(q, j, grid, rank=1) for j in range(d)], axis=-1)  # J[..., i, j] = d_j q_i
    return 0.5 * (J + np.swapaxes(J, -1, -2))


def grad(w, grid):
    """Jacobian ``J[..., i, j] = d_j w_i`` of a vector field."""
    return np.stack([derivative(w, j, grid, rank=1) for j in range(grid.d)], axis=-1)


def div(A, grid):
    """Row-wise divergence ``(div A)_i = sum_j d_j A_ij`` of a matrix field."""
    return sum(derivative(A[..., j], j, grid, rank=1) for j in range(grid.d))


def laplacian_bound(grid):
    """Largest eigenvalue of minus the spectral Laplacian."""
    return grid.d * float(np.max(wavenumbers(grid.n) ** 2))
