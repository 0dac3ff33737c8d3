"""Gradient flows of the Kantorovich-Bures geometry.

The gradient of a functional ``F`` at ``G`` with first variation ``V`` is
``[-grad(G div V) + G V]^Sym``; the flow ``dG/dt = -grad F(G)`` is integrated
with explicit Euler steps. Two functionals are provided:

* ``entropy``: ``F(G) = integral Tr(G log G - G)``, ``V = log G``;
* ``volume``: ``F(G) = integral sqrt(det G)``, ``V = sqrt(det G) G^{-1} / 2``.

In one dimension the entropy flow is ``dG/dt = G'' - G log G``.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import linalg, spectral
from .errors import DomainError, InputError, NumericError
from .measures import MatrixMeasure

log = logging.getLogger(__name__)

FUNCTIONALS = ("entropy", "volume")
EIG_FLOOR = 1e-12
CFL = 0.25


def _check_functional(kind):
    if kind not in FUNCTIONALS:
        raise InputError(f"functional must be one of {FUNCTIONALS}, got {kind!r}")


def _eigen_positive(G):
    w, V = np.linalg.eigh(linalg.sym(G.values))
    bad = np.argwhere(~(w[..., 0] > 0))
    if len(bad):
        index = tuple(int(i) for i in bad[0])
        raise DomainError(f"cell {index} is not positive-definite", lambda_min=float(w[index][0]), index=index)
    return w, V


def first_variation(G, kind):
    """First variation ``dF/dG`` per cell; requires positive-definite cells."""
    _check_functional(kind)
    w, V = _eigen_positive(G)
    Vt = np.swapaxes(V, -1, -2)
    if kind == "entropy":
        return (V * np.log(w)[..., None, :]) @ Vt
    root_det = np.sqrt(np.prod(w, axis=-1))
    inv = (V * (1.0 / w)[..., None, :]) @ Vt
    return 0.5 * root_det[..., None, None] * inv


def functional_value(G, kind):
    """``F(G)``; the entropy is defined on PSD cells (``0 log 0 = 0``), the volume on PSD cells."""
    _check_functional(kind)
    w = np.clip(np.linalg.eigvalsh(linalg.sym(G.values)), 0.0, None)
    if kind == "entropy":
        with np.errstate(divide="ignore", invalid="ignore"):
            density = np.where(w > 0, w * np.log(np.where(w > 0, w, 1.0)), 0.0) - w
        density = density.sum(axis=-1)
    else:
        density = np.sqrt(np.prod(w, axis=-1))
    return float(density.sum() * G.grid.cell_volume)


def kb_gradient(G, V):
    """``[-grad(G div V) + G V]^Sym`` with spectral derivatives on the torus.

    ``V`` is a symmetric field of the same shape as ``G.values`` (an ndarray
    or a :class:`MatrixMeasure` on the same grid).
    """
    if isinstance(V, MatrixMeasure):
        if V.grid != G.grid:
            raise InputError("fields live on different grids")
        V = V.values
    V = np.asarray(V, dtype=float)
    if V.shape != G.values.shape:
        raise InputError(f"field shape {V.shape} does not match {G.values.shape}")
    reaction = G.values @ V
    if G.grid.n == 1:
        return linalg.sym(reaction)
    if G.k != G.grid.d:
        raise InputError("transport needs matrix size equal to the spatial dimension")
    w = np.einsum("...ij,...j->...i", G.values, spectral.div(V, G.grid))
    return linalg.sym(reaction - spectral.grad(w, G.grid))


def stable_dt(G, kind):
    """Largest explicit Euler step accepted for the flow of ``kind`` from ``G``.

    ``CFL / (L * D + r)`` with ``L`` the spectral Laplacian bound, ``D`` an
    effective diffusivity of the linearized flow and ``r`` the reaction
    stiffness. For the entropy ``D`` is the largest cell condition number
    (one for scalar fields, whose flow is the heat equation) and
    ``r = max |log lambda| + 1``; for the volume ``D = max sqrt(det G) /
    lambda_min`` and ``r = max sqrt(det G) / lambda_min``.
    """
    _check_functional(kind)
    w, _ = _eigen_positive(G)
    lo, hi = w[..., 0], w[..., -1]
    lap = spectral.laplacian_bound(G.grid) if G.grid.n > 1 else 0.0
    if kind == "entropy":
        D = float(np.max(hi / lo))
        r = float(np.max(np.abs(np.log(w)))) + 1.0
    else:
        D = float(np.max(np.sqrt(np.prod(w, axis=-1)) / lo))
        r = D
    return CFL / (lap * D + r)


@dataclass
class FlowResult:
    times: list
    trajectory: list
    values: list
    clamped: list = field(default_factory=list)


def flow_evolve(G0, kind, dt, steps, record_every=1):
    """Explicit Euler integration of the gradient flow of ``kind``.

    Parameters
    ----------
    G0 : MatrixMeasure
        Positive-definite initial field.
    kind : {"entropy", "volume"}
    dt : float
        Time step; must not exceed :func:`stable_dt` at ``G0``.
    steps : int
        Number of steps.
    record_every : int
        Keep every ``record_every``-th slice (the last is always kept).

    Returns
    -------
    FlowResult
        Recorded times, slices and functional values (values are recorded at
        every step regardless of ``record_every``), plus the steps at which
        the eigenvalue floor had to be applied.
    """
    _check_functional(kind)
    if not dt > 0 or not np.isfinite(dt):
        raise InputError("dt must be positive and finite")
    if steps < 0 or record_every < 1:
        raise InputError("steps must be nonnegative and record_every positive")
    cap = stable_dt(G0, kind)
    if dt > cap:
        raise InputError(f"dt = {dt:g} exceeds the stability cap {cap:g}")
    G = G0
    result = FlowResult([0.0], [G0], [functional_value(G0, kind)])
    for step in range(1, steps + 1):
        grad = kb_gradient(G, first_variation(G, kind))
        values = linalg.sym(G.values - dt * grad)
        if not np.all(np.isfinite(values)):
            raise NumericError("flow produced non-finite values", step=step)
        w, V = np.linalg.eigh(values)
        if np.any(w < EIG_FLOOR):
            log.warning("step %d: eigenvalues below %g clamped", step, EIG_FLOOR)
            result.clamped.append(step)
            values = linalg.sym((V * np.maximum(w, EIG_FLOOR)[..., None, :]) @ np.swapaxes(V, -1, -2))
        G = MatrixMeasure(G0.grid, values)
        result.values.append(functional_value(G, kind))
        if step % record_every == 0 or step == steps:
            result.times.append(step * dt)
            result.trajectory.append(G)
    return result
