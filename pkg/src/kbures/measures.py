"""Matrix-valued measures on a uniform grid of the flat unit torus."""

from dataclasses import dataclass
from itertools import product

import numpy as np

from . import linalg
from .errors import DomainError, InputError

MEMORY_CAP = 1 << 24


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid with ``n`` cells per axis on the unit torus of dimension ``d``.

    ``n == 1`` is the single-cell "pointwise" grid, usable only where no
    spatial derivative is taken (Bures and Hellinger computations).
    """

    d: int
    n: int

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise InputError(f"spatial dimension must be 1, 2 or 3, got {self.d}")
        if self.n != 1 and (self.n < 2 or self.n % 2):
            raise InputError(f"cells per axis must be even and >= 2, got {self.n}")
        if self.d * self.n**self.d > MEMORY_CAP:
            raise InputError(f"grid {self.n}^{self.d} exceeds the memory cap")

    @property
    def shape(self):
        return (self.n,) * self.d

    @property
    def cells(self):
        return self.n**self.d

    @property
    def cell_volume(self):
        return 1.0 / self.cells

    def coordinates(self):
        """Cell-centre coordinates, shape ``(*shape, d)``."""
        axis = (np.arange(self.n) + 0.5) / self.n
        return np.stack(np.meshgrid(*([axis] * self.d), indexing="ij"), axis=-1)


@dataclass(frozen=True, eq=False)
class MatrixMeasure:
    """Cell-averaged PSD density ``values[cell] = G(x)`` of shape ``(*grid.shape, k, k)``.

    In transport computations ``k == grid.d``; other sizes are only meaningful
    for the pointwise (reaction-only) distances.
    """

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        shape = self.grid.shape
        if values.shape[: len(shape)] != shape or values.ndim != len(shape) + 2:
            raise InputError(f"values of shape {values.shape} do not fit grid {shape}")
        if values.shape[-1] != values.shape[-2]:
            raise InputError("cell values must be square matrices")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def k(self):
        return self.values.shape[-1]

    def check(self):
        """Raise unless every cell is finite, symmetric and PSD; returns ``self``."""
        bad = first_invalid_cell(self)
        if bad is not None:
            index, reason = bad
            raise DomainError(f"cell {index} is {reason}", index=index)
        return self

    def with_values(self, values):
        return MatrixMeasure(self.grid, values)


def first_invalid_cell(G):
    """Index and reason of the first cell (row-major) violating the PSD invariant, or ``None``."""
    vals = G.values.reshape(-1, G.k, G.k)
    finite = np.all(np.isfinite(vals), axis=(-2, -1))
    safe = np.where(finite[:, None, None], vals, 0.0)
    symm = linalg.is_symmetric(safe)
    psd = linalg.is_psd(safe)
    for flat in range(vals.shape[0]):
        reason = None
        if not finite[flat]:
            reason = "not finite"
        elif not symm[flat]:
            reason = "not symmetric"
        elif not psd[flat]:
            reason = "not positive-semidefinite"
        if reason:
            return tuple(int(i) for i in np.unravel_index(flat, G.grid.shape)), reason
    return None


def zero_like(G):
    return MatrixMeasure(G.grid, np.zeros_like(G.values))


def total_mass(G):
    """``sum_cells Tr G(x) * cell_volume``."""
    return float(np.trace(G.values, axis1=-2, axis2=-1).sum() * G.grid.cell_volume)


def normalize_to_unit_mass(G):
    """Split ``G`` into cone coordinates ``(G / r**2, r)`` with ``r = sqrt(mass)``."""
    m = total_mass(G)
    if m <= 0.0:
        raise DomainError("the zero measure has no unit-mass representative")
    r = np.sqrt(m)
    return MatrixMeasure(G.grid, G.values / m), float(r)


def scale_measure(G, r):
    if r < 0:
        raise InputError("radius must be nonnegative")
    return MatrixMeasure(G.grid, G.values * (r * r))


def _check_matrix(P, d):
    P = np.asarray(P, dtype=float)
    if P.shape != (d, d):
        raise InputError(f"generator matrix must be {d}x{d}, got {P.shape}")
    if not linalg.is_symmetric(P) or not linalg.is_psd(P):
        raise InputError("generator matrix must be symmetric positive-semidefinite")
    return P


def _torus_offset(x, center):
    delta = x - np.asarray(center, dtype=float)
    return delta - np.round(delta)


def _rotation(d, angle, axis=(0, 1)):
    R = np.broadcast_to(np.eye(d), angle.shape + (d, d)).copy()
    if d == 1:
        return R
    i, j = axis
    c, s = np.cos(angle), np.sin(angle)
    R[..., i, i], R[..., j, j] = c, c
    R[..., i, j], R[..., j, i] = -s, s
    return R


def synth_measure(grid, generator, seed=0, **params):
    """Deterministic synthetic measures for fixtures and the CLI.

    Generators
    ----------
    ``constant``
        ``G(x) = P``.
    ``bump``
        ``G(x) = P * (floor + exp(-|x - center|^2 / (2 width^2)))``, with torus
        distance. A width of zero or infinity degenerates to the constant ``P``.
    ``rotating``
        ``G(x) = Q(x) P Q(x)^T`` with ``Q`` a rotation in the first two axes by
        the angle ``amplitude * sin(2 pi x_0)``.
    ``random``
        Smooth positive-definite field built from a few low Fourier modes drawn
        from ``seed``; ``floor`` keeps it away from singular. ``P`` is ignored.
    """
    d = grid.d
    P = _check_matrix(params.get("P", np.eye(d)), d)
    x = grid.coordinates()
    shape = grid.shape
    if generator == "constant":
        values = np.broadcast_to(P, shape + (d, d)).copy()
    elif generator == "bump":
        width = float(params.get("width", 0.1))
        floor = float(params.get("floor", 0.0))
        if width <= 0.0 or not np.isfinite(width):
            values = np.broadcast_to(P, shape + (d, d)).copy()
        else:
            center = params.get("center", [0.5] * d)
            r2 = np.sum(_torus_offset(x, center) ** 2, axis=-1)
            profile = floor + np.exp(-r2 / (2.0 * width**2))
            values = profile[..., None, None] * P
    elif generator == "rotating":
        amplitude = float(params.get("amplitude", np.pi / 2))
        Q = _rotation(d, amplitude * np.sin(2 * np.pi * x[..., 0]))
        values = Q @ P @ np.swapaxes(Q, -1, -2)
    elif generator == "random":
        rng = np.random.default_rng(seed)
        modes = int(params.get("modes", 2))
        floor = float(params.get("floor", 0.2))
        amp = float(params.get("amplitude", 0.5))
        A = np.broadcast_to(np.eye(d), shape + (d, d)).copy()
        for freq in product(range(-modes, modes + 1), repeat=d):
            if not any(freq):
                continue
            coef = rng.normal(size=(d, d)) * amp / (1.0 + np.sum(np.square(freq)))
            phase = rng.uniform(0, 2 * np.pi)
            wave = np.cos(2 * np.pi * (x @ np.asarray(freq, dtype=float)) + phase)
            A += wave[..., None, None] * coef
        values = A @ np.swapaxes(A, -1, -2) + floor * np.eye(d)
    else:
        raise InputError(f"unknown generator {generator!r}")
    return MatrixMeasure(grid, linalg.sym(values))


def is_signed_permutation(Q):
    Q = np.asarray(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        return False
    nz = Q != 0
    return (
        np.all(np.isin(Q, (-1.0, 0.0, 1.0)))
        and np.all(nz.sum(axis=0) == 1)
        and np.all(nz.sum(axis=1) == 1)
    )


def grid_symmetry_indices(grid, Q):
    """Index map of the grid symmetry ``x -> Q x``: returns the target index per source cell.

    Cell centres sit at ``(i + 1/2)/n``, so the reflection ``x -> -x`` maps index
    ``i`` to ``n - 1 - i``.
    """
    Q = np.asarray(Q, dtype=float)
    if not is_signed_permutation(Q) or Q.shape[0] != grid.d:
        raise InputError("Q must be a signed permutation matrix of size d (a grid symmetry)")
    idx = np.indices(grid.shape)
    out = []
    for a in range(grid.d):
        b = int(np.flatnonzero(Q[a])[0])
        src = idx[b]
        out.append(src if Q[a, b] > 0 else grid.n - 1 - src)
    return tuple(out)


def transform_field(grid, field, Q, rank):
    """Move a tensor field ``(*grid.shape, ...)`` by ``x -> Q x`` acting on ``rank`` trailing axes."""
    Q = np.asarray(Q, dtype=float)
    target = grid_symmetry_indices(grid, Q)
    field = np.asarray(field)
    if rank == 2:
        moved = Q @ field @ Q.T
    elif rank == 1:
        moved = field @ Q.T
    else:
        moved = field
    out = np.empty_like(moved)
    out[target] = moved
    return out


def orthogonal_conjugate(G, Q):
    """Frame change by a grid symmetry: the cell at ``Q x`` receives ``Q G(x) Q^T``."""
    if G.k != G.grid.d:
        raise InputError("frame changes need matrix size equal to the spatial dimension")
    return MatrixMeasure(G.grid, transform_field(G.grid, G.values, Q, rank=2))
