"""Closed-form distances and geodesics used as oracles for the dynamic solver.

Conventions: the kinetic energy carries no factor 1/4, so every squared
distance here is four times its textbook counterpart (for instance the Bures
distance below is twice the Bures-Wasserstein distance between centred
Gaussians with these covariances).
"""

from dataclasses import dataclass

import numpy as np

from . import linalg
from .errors import InputError, PreconditionError
from .measures import MatrixMeasure, total_mass

COMMUTE_TOL = 1e-12


def _bures_sq_one_way(P0, P1):
    root0 = linalg.psd_apply_fn(P0, "sqrt")
    inner = linalg.sym(root0 @ P1 @ root0)
    w = np.clip(np.linalg.eigvalsh(inner), 0.0, None)
    return np.trace(P0, axis1=-2, axis2=-1) + np.trace(P1, axis1=-2, axis2=-1) - 2.0 * np.sqrt(w).sum(axis=-1)


def bures_distance_sq(P0, P1):
    """Squared distance ``4 (Tr P0 + Tr P1 - 2 Tr (P0^1/2 P1 P0^1/2)^1/2)``, batched.

    Evaluated in both argument orders and averaged so the result is exactly
    symmetric; roundoff-negative values are clamped to zero.
    """
    P0 = linalg.check_symmetric(P0, "P0")
    P1 = linalg.check_symmetric(P1, "P1")
    if P0.shape != P1.shape:
        raise InputError(f"shape mismatch {P0.shape} vs {P1.shape}")
    radicand = 0.5 * (_bures_sq_one_way(P0, P1) + _bures_sq_one_way(P1, P0))
    same = np.all(P0 == P1, axis=(-2, -1))
    return np.where(same, 0.0, 4.0 * np.clip(radicand, 0.0, None))


def bures_distance(P0, P1):
    d2 = bures_distance_sq(P0, P1)
    return float(np.sqrt(d2)) if np.ndim(d2) == 0 else np.sqrt(d2)


def bures_geodesic_point(P0, P1, t):
    """``((1-t) I + t X) P0 ((1-t) I + t X)`` with ``X P0 X = P1``."""
    P0 = linalg.check_symmetric(P0, "P0")
    X = linalg.riccati_solve(P0, P1)
    eye = np.eye(P0.shape[-1])
    M = (1.0 - t) * eye + t * X
    return linalg.sym(M @ P0 @ M)


@dataclass(frozen=True, eq=False)
class ConstantPair:
    """Endpoints ``A0 G* A0`` and ``A1 G* A1`` generated by constant matrices."""

    A0: np.ndarray
    A1: np.ndarray
    Gstar: MatrixMeasure

    def __post_init__(self):
        k = self.Gstar.k
        for name in ("A0", "A1"):
            A = linalg.check_symmetric(getattr(self, name), name)
            if A.shape != (k, k):
                raise InputError(f"{name} must be {k}x{k}")
            if not linalg.is_psd(A):
                raise InputError(f"{name} must be positive-semidefinite")
            object.__setattr__(self, name, A)

    @property
    def commuting(self):
        A0, A1 = self.A0, self.A1
        gap = np.linalg.norm(A0 @ A1 - A1 @ A0)
        return gap <= COMMUTE_TOL * max(np.linalg.norm(A0) * np.linalg.norm(A1), 1e-300)

    def endpoint(self, which):
        A = self.A0 if which == 0 else self.A1
        return MatrixMeasure(self.Gstar.grid, A @ self.Gstar.values @ A)


def _require_commuting(pair):
    if not pair.commuting:
        raise PreconditionError("A0 and A1 do not commute")


def commuting_distance(pair):
    """``sqrt(4 * sum_cells Tr(G*(A1 - A0)^2) * cell_volume)``."""
    _require_commuting(pair)
    D = pair.A1 - pair.A0
    density = np.einsum("...ij,jk,ki->...", pair.Gstar.values, D, D)
    return float(np.sqrt(max(4.0 * density.sum() * pair.Gstar.grid.cell_volume, 0.0)))


def commuting_geodesic_point(pair, t):
    _require_commuting(pair)
    if t == 0:
        return pair.endpoint(0)
    if t == 1:
        return pair.endpoint(1)
    A = t * pair.A1 + (1.0 - t) * pair.A0
    return MatrixMeasure(pair.Gstar.grid, A @ pair.Gstar.values @ A)


def geodesic_to_zero(G, t):
    """Point ``(1-t)^2 G`` on the geodesic to the zero measure, and the distance ``2 sqrt(mass)``."""
    point = MatrixMeasure(G.grid, (1.0 - t) ** 2 * G.values)
    return point, 2.0 * np.sqrt(total_mass(G))


def _same_grid(G0, G1):
    if G0.grid != G1.grid or G0.values.shape != G1.values.shape:
        raise InputError("measures live on different grids")


def regularization(G0, G1):
    """Shift ``eps`` making both endpoint fields positive-definite (zero when already so)."""
    lam = min(linalg.min_eigenvalue(G0.values).min(), linalg.min_eigenvalue(G1.values).min())
    top = max(
        np.trace(G0.values, axis1=-2, axis2=-1).max(),
        np.trace(G1.values, axis1=-2, axis2=-1).max(),
    )
    if lam > 1e-12 * max(top, 1e-300):
        return 0.0
    return 1e-9 * top if top > 0 else 1e-9


@dataclass(frozen=True, eq=False)
class SqrtPath:
    """Interpolation ``G_t = (t sqrt(G1) + (1-t) sqrt(G0))^2`` with its discrete energy."""

    G0: MatrixMeasure
    G1: MatrixMeasure
    nt: int
    energy: float
    eps: float
    root0: np.ndarray
    root1: np.ndarray

    def sample(self, t):
        if t == 0:
            return self.G0
        if t == 1:
            return self.G1
        B = self.root0 + t * (self.root1 - self.root0)
        return MatrixMeasure(self.G0.grid, linalg.sym(B @ B))

    def nodes(self):
        """Node values ``(nt + 1, *grid.shape, k, k)``; endpoints are the exact inputs."""
        ts = np.linspace(0.0, 1.0, self.nt + 1)
        out = np.empty((self.nt + 1,) + self.G0.values.shape)
        for i, t in enumerate(ts):
            out[i] = self.sample(float(t)).values
        # cells with equal endpoints stay exactly constant
        same = np.all(self.G0.values == self.G1.values, axis=(-2, -1))
        out[:, same] = self.G0.values[same]
        return out


def sqrt_path_energy(G0, G1, nt, scheme="staggered"):
    """Energy of the square-root interpolation between ``G0`` and ``G1``.

    ``scheme="staggered"`` evaluates the reaction potential on each time
    interval from the node difference ``(G_{k+1} - G_k) / dt`` and the interval
    average of ``G``, exactly as the dynamic solver discretizes a path.
    ``scheme="midpoint"`` instead uses the analytic rate
    ``2 ((sqrt G1 - sqrt G0) B_t)^Sym`` at ``B_t^2``, ``t`` the interval midpoint.
    Both are second-order accurate in ``1/nt``. Singular cells are handled by
    adding ``eps I`` to the square roots' arguments (reported as ``eps``).
    """
    _same_grid(G0, G1)
    if nt < 1:
        raise InputError("nt must be positive")
    eps = regularization(G0, G1)
    eye = np.eye(G0.k)
    root0 = linalg.psd_apply_fn(G0.values + eps * eye, "sqrt")
    root1 = linalg.psd_apply_fn(G1.values + eps * eye, "sqrt")
    path = SqrtPath(G0, G1, nt, 0.0, eps, root0, root1)
    dt = 1.0 / nt
    vol = G0.grid.cell_volume
    total = 0.0
    if scheme == "staggered":
        nodes = path.nodes()
        for k in range(nt):
            Gbar = 0.5 * (nodes[k] + nodes[k + 1])
            rate = (nodes[k + 1] - nodes[k]) / dt
            total += dt * vol * _reaction_energy(Gbar, rate)
    elif scheme == "midpoint":
        D = root1 - root0
        for k in range(nt):
            t = (k + 0.5) * dt
            B = root0 + t * D
            total += dt * vol * _reaction_energy(linalg.sym(B @ B), 2.0 * linalg.sym(D @ B))
    else:
        raise InputError(f"unknown scheme {scheme!r}")
    return SqrtPath(G0, G1, nt, float(total), eps, root0, root1)


def _reaction_energy(P, rate):
    """``sum Tr(P U U)`` with ``P U + U P = 2 rate``; zero-rate cells contribute nothing."""
    active = linalg.frob(rate) > 0
    if not np.any(active):
        return 0.0
    U = linalg.lyapunov_solve(P[active], linalg.sym(rate[active]))
    return float(np.einsum("cij,cjk,cki->", P[active], U, U))


def pointwise_hellinger_distance(G0, G1):
    """``sqrt(sum_cells bures_distance(G0(x), G1(x))^2 * cell_volume)``."""
    _same_grid(G0, G1)
    d2 = bures_distance_sq(G0.values, G1.values)
    return float(np.sqrt(np.sum(d2) * G0.grid.cell_volume))
