"""Dynamic computation of the Kantorovich-Bures distance.

The path is discretized on a staggered time grid: densities ``G`` on the
``nt + 1`` nodes, momenta ``q = G u`` and ``R = G U`` on the ``nt`` interval
midpoints. The discrete problem is::

    min  dt * vol * sum_{k, cells} Tr(Gbar_k^{-1} (q_k q_k^T + R_k R_k^T))
    s.t. (G_{k+1} - G_k) / dt + (grad q_k)^Sym - R_k^Sym = 0,
         G_0, G_nt pinned,

with ``Gbar_k = (G_k + G_{k+1}) / 2``. ``R`` is stored as a full matrix: only
its symmetric part enters the constraint, but the cost sees all of it, and
the minimizer is ``R = Gbar U`` with ``U`` symmetric, which is not symmetric
in general.

The convex problem is solved with the first-order primal-dual method of
Chambolle and Pock: the primal step is the exact Euclidean projection onto the
constraint (diagonal in space by FFT and in time by a fixed eigenbasis), and
the dual step applies the per-cell perspective prox to interval averages.
"""

import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import linalg, spectral
from .closed_form import regularization, sqrt_path_energy
from .errors import InputError, NumericError
from .measures import MatrixMeasure, total_mass, transform_field
from .prox import cell_prox, perspective

log = logging.getLogger(__name__)

MODES = ("kb", "hellinger")


@dataclass(frozen=True)
class SolverConfig:
    nt: int = 32
    max_iter: int = 4000
    tau: float | None = None
    sigma: float | None = None
    theta: float = 1.0
    tol_energy: float = 1e-5
    tol_residual: float = 1e-4
    mode: str = "kb"
    seed: int = 0
    check_every: int = 10

    def __post_init__(self):
        if self.nt < 2:
            raise InputError("nt must be at least 2")
        if self.max_iter < 0:
            raise InputError("max_iter must be nonnegative")
        for name in ("tau", "sigma"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise InputError(f"{name} must be positive")
        if not 0.0 <= self.theta <= 1.0:
            raise InputError("theta must lie in [0, 1]")
        if self.mode not in MODES:
            raise InputError(f"mode must be one of {MODES}")
        if self.check_every < 1:
            raise InputError("check_every must be positive")

    def to_dict(self):
        return asdict(self)


@dataclass(eq=False)
class TransportPath:
    """Staggered discrete path.

    ``G`` has shape ``(nt + 1, *grid.shape, k, k)``; ``q`` has shape
    ``(nt, *grid.shape, d)`` (all zeros in reaction-only problems); ``R`` has
    shape ``(nt, *grid.shape, k, k)``.
    """

    grid: object
    G: np.ndarray
    q: np.ndarray
    R: np.ndarray

    @property
    def nt(self):
        return self.R.shape[0]

    @property
    def dt(self):
        return 1.0 / self.nt

    @property
    def k(self):
        return self.G.shape[-1]

    def copy(self):
        return TransportPath(self.grid, self.G.copy(), self.q.copy(), self.R.copy())

    def midpoint_density(self):
        return 0.5 * (self.G[1:] + self.G[:-1])

    def transformed(self, Q):
        """Path moved by the grid symmetry ``x -> Q x`` (tensors conjugated, vectors rotated)."""
        g = self.grid
        move = lambda arr, rank: np.stack([transform_field(g, a, Q, rank) for a in arr])
        return TransportPath(g, move(self.G, 2), move(self.q, 1), move(self.R, 2))


@dataclass
class SolverReport:
    distance: float
    energy: float
    residual: float
    iterations: int
    converged: bool
    mode: str
    max_mass: float
    mass_bound: float
    log: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def _check_pair(G0, G1, mode):
    if G0.grid != G1.grid or G0.values.shape != G1.values.shape:
        raise InputError("endpoints live on different grids")
    if mode == "kb":
        if G0.k != G0.grid.d:
            raise InputError("transport mode needs matrix size equal to the spatial dimension")
        if G0.grid.n < 2:
            raise InputError("transport mode needs at least two cells per axis")


def _zero_path(grid, nt, k, G0, G1):
    shape = grid.shape
    G = np.empty((nt + 1,) + shape + (k, k))
    G[0], G[-1] = G0.values, G1.values
    return TransportPath(grid, G, np.zeros((nt,) + shape + (grid.d,)), np.zeros((nt,) + shape + (k, k)))


def discretize(G0, G1, cfg):
    """Initial iterate: the square-root interpolation with its reaction potentials.

    Nodes are ``(t sqrt(G1) + (1-t) sqrt(G0))^2`` (endpoints are the inputs
    bitwise), ``q = 0`` and ``R_k = Gbar_k U_k`` with ``U_k`` the Lyapunov
    solution of ``Gbar_k U + U Gbar_k = 2 (G_{k+1} - G_k) / dt``.
    """
    _check_pair(G0, G1, cfg.mode)
    sp = sqrt_path_energy(G0, G1, cfg.nt)
    path = _zero_path(G0.grid, cfg.nt, G0.k, G0, G1)
    path.G[1:-1] = sp.nodes()[1:-1]
    Gbar = path.midpoint_density()
    rate = (path.G[1:] - path.G[:-1]) / path.dt
    active = linalg.frob(rate) > 0
    if np.any(active):
        U = linalg.lyapunov_solve(Gbar[active], linalg.sym(rate[active]))
        path.R[active] = Gbar[active] @ U
    return path


def continuity_field(path, transport=True):
    """Pointwise constraint defect ``(G_{k+1} - G_k)/dt + (grad q_k)^Sym - R_k^Sym``."""
    r = (path.G[1:] - path.G[:-1]) / path.dt - linalg.sym(path.R)
    if transport:
        r = r + spectral.sym_grad(path.q, path.grid)
    return r


def continuity_residual(path, transport=True):
    """Root-mean-square over midpoints and cells of the Frobenius norm of the defect."""
    r = continuity_field(path, transport)
    return float(np.sqrt(np.mean(np.sum(r**2, axis=(-2, -1)))))


class ContinuityProjector:
    """Exact Euclidean projection onto the discrete continuity constraint.

    Per Fourier mode the normal operator ``L L^T`` is
    ``T / dt^2 + I + M_xi`` with ``T`` the time second-difference matrix of the
    interior nodes and ``M_xi(S) = (S xi xi^T + xi xi^T S) / 2``; both parts
    are diagonalized once, so the normal equations are solved exactly.
    """

    def __init__(self, grid, nt, transport=True):
        self.grid = grid
        self.nt = nt
        self.transport = transport
        dt = 1.0 / nt
        A = np.zeros((nt, nt - 1))
        for j in range(nt - 1):  # interior node j + 1
            A[j, j] = 1.0
            A[j + 1, j] = -1.0
        tau, W = np.linalg.eigh(A @ A.T)
        self.W = W
        self.alpha = tau / dt**2 + 1.0
        if transport:
            xi = spectral.wavevectors(grid)
            kappa = np.sum(xi**2, axis=-1)
            with np.errstate(invalid="ignore", divide="ignore"):
                P = np.where(kappa[..., None, None] > 0, xi[..., :, None] * xi[..., None, :] / kappa[..., None, None], 0.0)
            self.P = P
            self.kappa = kappa

    def _solve_normal(self, r):
        nt, d = self.nt, self.grid.d
        tw = np.tensordot(self.W.T, r, axes=(1, 0))
        spatial = tuple(range(1, 1 + d))
        if not self.transport:
            lam = tw / self.alpha.reshape((nt,) + (1,) * (r.ndim - 1))
            return np.tensordot(self.W, lam, axes=(1, 0))
        rh = np.fft.fftn(tw, axes=spatial)
        a = self.alpha.reshape((nt,) + (1,) * (d + 2))
        kap = self.kappa[None, ..., None, None]
        P = self.P[None]
        PL = P @ rh
        LP = rh @ P
        PLP = PL @ P
        c_pp = 1.0 / (a + kap) - 2.0 / (a + 0.5 * kap) + 1.0 / a
        c_p = 1.0 / (a + 0.5 * kap) - 1.0 / a
        lam_h = c_pp * PLP + c_p * (PL + LP) + rh / a
        lam = np.fft.ifftn(lam_h, axes=spatial).real
        return np.tensordot(self.W, lam, axes=(1, 0))

    def __call__(self, path, out=None):
        out = path.copy() if out is None else out
        if not self.transport:
            out.q[...] = 0.0
        r = continuity_field(out, self.transport)
        lam = linalg.sym(self._solve_normal(r))
        dt = 1.0 / self.nt
        out.G[1:-1] -= (lam[:-1] - lam[1:]) / dt
        out.R += lam
        if self.transport:
            out.q += spectral.div(lam, self.grid)
        return out


def project_onto_continuity(path, transport=True):
    """Euclidean projection of ``(interior G, q, R)`` onto the continuity constraint.

    With ``transport=False`` the projection is onto the reaction-only set
    ``q = 0`` (the Hellinger variant).
    """
    return ContinuityProjector(path.grid, path.nt, transport)(path)


def slice_energies(path):
    """Energy ``vol * sum_cells Tr(Gbar^+ (q q^T + R R^T))`` of each time interval."""
    Gbar = path.midpoint_density()
    q = path.q if path.k == path.grid.d else None
    cost = perspective(Gbar, q, path.R)
    axes = tuple(range(1, 1 + path.grid.d))
    return np.sum(cost, axis=axes) * path.grid.cell_volume


def path_energy(path):
    """Discrete kinetic energy ``dt * sum_k slice_energies``; ``inf`` flags momentum on null directions."""
    return float(np.sum(slice_energies(path)) * path.dt)


def sample_path(path, t):
    """Density at time ``t`` by linear interpolation between nodes, clamped PSD."""
    if not 0.0 <= t <= 1.0:
        raise InputError("t must lie in [0, 1]")
    s = t * path.nt
    i = int(np.floor(s))
    if s == i:
        return MatrixMeasure(path.grid, path.G[i])
    w = s - i
    return MatrixMeasure(path.grid, linalg.psd_project((1.0 - w) * path.G[i] + w * path.G[i + 1]))


class _Interp:
    """The linear map ``K``: path -> (interval-averaged G, q, R) and its adjoint."""

    @staticmethod
    def forward(path):
        return path.midpoint_density(), path.q, path.R

    @staticmethod
    def adjoint(Gm, q, R, like):
        out = TransportPath(like.grid, np.zeros_like(like.G), q.copy(), R.copy())
        out.G[1:-1] = 0.5 * (Gm[:-1] + Gm[1:])
        return out


def interp_norm(grid, nt, k, iterations=50, seed=0):
    """Operator norm of the interval-averaging map, by power iteration on ``K^T K``."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(nt - 1,) + grid.shape + (k, k))
    norm = 0.0
    for _ in range(iterations):
        x /= np.linalg.norm(x)
        full = np.zeros((nt + 1,) + x.shape[1:])
        full[1:-1] = x
        avg = 0.5 * (full[1:] + full[:-1])
        y = 0.5 * (avg[:-1] + avg[1:])
        norm = np.linalg.norm(y)
        x = y
    # momentum blocks pass through unchanged, so the norm is at least one
    return float(np.sqrt(max(norm, 1.0)))


def _dual_start(path, transport):
    """Gradient of the perspective at the interval averages of ``path``.

    The initial path is close to optimal, so this places the dual iterate
    near its optimum; without it the dual variables must grow to order
    ``nt^2`` next to vanishing endpoints one step at a time.
    """
    Gm, q, R = _Interp.forward(path)
    M = R if not transport else np.concatenate([q[..., :, None], R], axis=-1)
    w, V = np.linalg.eigh(Gm)
    top = np.maximum(w[..., -1:], 1e-300)
    inv = np.where(w > 1e-12 * top, 1.0 / np.where(w > 1e-12 * top, w, 1.0), 0.0)
    Gp = (V * inv[..., None, :]) @ np.swapaxes(V, -1, -2)
    U = Gp @ M
    yG = -linalg.sym(U @ np.swapaxes(U, -1, -2))
    yM = 2.0 * U
    if transport:
        return yG, yM[..., 0], yM[..., 1:]
    return yG, np.zeros_like(q), yM


def _step_sizes(cfg, norm, primal, dual):
    """Default steps ``tau = rho / L``, ``sigma = 1 / (rho L)`` with ``tau sigma L^2 = 1``.

    ``rho = min(1, 3 |x0| / |y0|)`` balances the primal and dual scales of the
    starting point; it only drops below one when the dual is large, as next to
    a vanishing endpoint where the reaction rate grows like ``nt``.
    """
    nx = np.sqrt(sum(np.sum(a**2) for a in primal))
    ny = np.sqrt(sum(np.sum(a**2) for a in dual))
    rho = 1.0 if ny == 0.0 else min(1.0, 3.0 * nx / ny)
    tau = cfg.tau if cfg.tau is not None else rho / norm
    sigma = cfg.sigma if cfg.sigma is not None else 1.0 / (tau * norm**2)
    return tau, sigma


def _mass_profile(path):
    return np.trace(path.G, axis1=-2, axis2=-1).reshape(path.nt + 1, -1).sum(axis=1) * path.grid.cell_volume


def _order_key(G):
    return G.values.tobytes()


def reverse_path(path):
    """The same path run backwards: nodes reversed, momenta reversed and negated."""
    return TransportPath(path.grid, path.G[::-1].copy(), -path.q[::-1], -path.R[::-1])


def solve(G0, G1, cfg=None, callback=None):
    """Compute the distance between ``G0`` and ``G1`` and an optimal discrete path.

    Returns
    -------
    report : SolverReport
        ``distance = sqrt(energy)`` of the returned path, its continuity
        residual, iteration count, convergence flag and a log of checkpoints.
    path : TransportPath
        Final path; densities are clamped PSD and endpoints equal the inputs.
    """
    cfg = cfg or SolverConfig()
    _check_pair(G0, G1, cfg.mode)
    if _order_key(G1) < _order_key(G0):
        # Time reversal maps solutions to solutions; solving in a canonical
        # endpoint order makes the distance exactly symmetric.
        report, path = solve(G1, G0, cfg, callback)
        return report, reverse_path(path)
    transport = cfg.mode == "kb"
    m0, m1 = total_mass(G0), total_mass(G1)
    if m0 == 0.0 and m1 == 0.0:
        path = _zero_path(G0.grid, cfg.nt, G0.k, G0, G1)
        path.G[1:-1] = 0.0
        report = SolverReport(0.0, 0.0, 0.0, 0, True, cfg.mode, 0.0, 0.0)
        return report, path

    # The problem is 1-homogeneous: solve at unit average mass, rescale after.
    scale = 0.5 * (m0 + m1)
    H0 = MatrixMeasure(G0.grid, G0.values / scale)
    H1 = MatrixMeasure(G1.grid, G1.values / scale)

    x = discretize(H0, H1, cfg)
    if not transport:
        x.q[...] = 0.0
    project = ContinuityProjector(x.grid, x.nt, transport)
    x = project(x)
    qmask = transport
    yG, yq, yR = _dual_start(x, qmask)
    norm = interp_norm(x.grid, x.nt, x.k, seed=cfg.seed)
    tau, sigma = _step_sizes(cfg, norm, _Interp.forward(x), (yG, yq, yR))
    theta = cfg.theta
    xbar = x.copy()
    G_warm = None
    history = []
    converged = False
    last_energy = None
    it = 0
    for it in range(1, cfg.max_iter + 1):
        Gm, qm, Rm = _Interp.forward(xbar)
        vG = yG + sigma * Gm
        vq = yq + sigma * qm
        vR = yR + sigma * Rm
        pG, pq, pR = cell_prox(vG / sigma, vq / sigma if qmask else None, vR / sigma, 1.0 / sigma, G_init=G_warm)
        G_warm = pG
        yG = vG - sigma * pG
        yR = vR - sigma * pR
        if qmask:
            yq = vq - sigma * pq
        step = _Interp.adjoint(yG, yq, yR, x)
        x_old = x
        x = x_old.copy()
        x.G[1:-1] -= tau * step.G[1:-1]
        x.q -= tau * step.q
        x.R -= tau * step.R
        x = project(x, out=x)
        xbar = TransportPath(x.grid, x.G + theta * (x.G - x_old.G), x.q + theta * (x.q - x_old.q), x.R + theta * (x.R - x_old.R))
        if not np.all(np.isfinite(x.G)) or not np.all(np.isfinite(yG)):
            raise NumericError("non-finite iterate", iteration=it)
        if it % cfg.check_every == 0 or it == cfg.max_iter:
            Gm, qm, Rm = _Interp.forward(x)
            mismatch = np.sqrt(
                np.sum((Gm - pG) ** 2) + (np.sum((qm - pq) ** 2) if qmask else 0.0) + np.sum((Rm - pR) ** 2)
            )
            mismatch /= np.sqrt(np.sum(Gm**2) + np.sum(qm**2) + np.sum(Rm**2)) + 1e-300
            energy = float(np.sum(perspective(pG, pq, pR)) * x.dt * x.grid.cell_volume) * scale
            entry = {"iteration": it, "energy": energy, "mismatch": float(mismatch)}
            history.append(entry)
            if callback is not None:
                callback(it, x, entry)
            if last_energy is not None:
                change = abs(energy - last_energy) / max(abs(energy), 1e-12)
                if change < cfg.tol_energy and mismatch < cfg.tol_residual:
                    converged = True
                    break
            last_energy = energy

    path = x
    path.G[1:-1] = linalg.psd_project(path.G[1:-1])
    path.G *= scale
    path.G[0], path.G[-1] = G0.values, G1.values
    path.q *= scale
    path.R *= scale
    energy = path_energy(path)
    masses = _mass_profile(path)
    report = SolverReport(
        distance=float(np.sqrt(energy)),
        energy=energy,
        residual=continuity_residual(path, transport),
        iterations=it,
        converged=converged,
        mode=cfg.mode,
        max_mass=float(masses.max()),
        mass_bound=2.0 * (max(m0, m1) + energy),
        log=history,
    )
    log.debug("solve finished: %s", {k: v for k, v in report.to_dict().items() if k != "log"})
    return report, path
