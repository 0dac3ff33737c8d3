"""Proximal map of the matrix perspective ``f(G, M) = Tr(G^{-1} M M^T)``.

The momentum block ``M`` stacks the transport momentum ``q`` (one column) and
the reaction momentum ``R`` (``k`` columns), so ``M M^T = q q^T + R R^T``.

For fixed ``G`` the optimal momentum is ``M = G (G + 2 s I)^{-1} Mt``. Eliminating
it leaves the strongly convex problem in ``G``::

    min_{G >= 0}  1/2 |G - Gt|^2 + s Tr(C (G + 2 s I)^{-1}),   C = Mt Mt^T

whose optimality condition is the fixed point
``G = Proj_PSD(Gt + s H^{-1} C H^{-1})`` with ``H = G + 2 s I``. We solve it by
a semismooth Newton method on that fixed-point residual.
"""

import numpy as np

from . import linalg
from .errors import NumericError

MAX_STEPS = 200


def _sym_basis(k):
    basis = []
    for a in range(k):
        for b in range(a, k):
            E = np.zeros((k, k))
            if a == b:
                E[a, a] = 1.0
            else:
                E[a, b] = E[b, a] = np.sqrt(0.5)
            basis.append(E)
    return np.array(basis)


def _eig(A):
    w, V = np.linalg.eigh(linalg.sym(A))
    return w, V


def _proj_and_weights(S):
    """PSD projection of ``S`` plus the divided-difference weights of its derivative."""
    w, V = _eig(S)
    wp = np.clip(w, 0.0, None)
    P = np.einsum("...ij,...j,...kj->...ik", V, wp, V)
    dw = w[..., :, None] - w[..., None, :]
    dp = wp[..., :, None] - wp[..., None, :]
    close = np.abs(dw) <= 1e-14 * (1.0 + np.abs(w[..., :, None]) + np.abs(w[..., None, :]))
    pos = (w[..., :, None] > 0) & (w[..., None, :] > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        omega = np.where(close, pos.astype(float), dp / np.where(close, 1.0, dw))
    return P, V, omega


def _residual(G, Gt, C, s, eye):
    H = G + 2.0 * s[..., None, None] * eye
    Hinv = np.linalg.inv(H)
    Phi = s[..., None, None] * linalg.sym(Hinv @ C @ Hinv)
    S = Gt + Phi
    P, V, omega = _proj_and_weights(S)
    return G - P, Hinv, Phi, V, omega


def _scalar_prox_g(gt, c, s):
    """Scalar case: root of ``(g - gt)(g + 2s)^2 = s c`` on ``g >= 0`` (or ``g = 0``)."""
    g = np.zeros_like(gt)
    active = gt + c / (4.0 * s) > 0.0
    # h(g) = g - gt - s c / (g + 2s)^2 is increasing and concave, so Newton from
    # g = 0 (where h < 0) increases monotonically to the root.
    g = np.where(active, np.maximum(gt, 0.0) * (c == 0), 0.0)
    for _ in range(MAX_STEPS):
        H = g + 2.0 * s
        h = g - gt - s * c / H**2
        dh = 1.0 + 2.0 * s * c / H**3
        step = np.where(active, -h / dh, 0.0)
        g = g + step
        if np.all(np.abs(step) <= 1e-14 * (1.0 + np.abs(g) + np.abs(gt) + s)):
            break
    else:
        raise NumericError("scalar prox did not converge", max_step=float(np.max(np.abs(step))))
    return np.where(active, np.maximum(g, 0.0), 0.0)


def prox_g(Gt, C, s, G_init=None, tol=1e-13):
    """Solve for ``G`` given the stacked data ``Gt``, ``C = Mt Mt^T`` and parameters ``s``.

    ``G_init`` is an optional warm start (any symmetric matrices with
    ``G + 2 s I`` positive-definite); the PSD projection of ``Gt`` otherwise.
    """
    k = Gt.shape[-1]
    batch = Gt.shape[:-2]
    s = np.broadcast_to(np.asarray(s, dtype=float), batch)
    if k == 1:
        return _scalar_prox_g(Gt[..., 0, 0], C[..., 0, 0], s)[..., None, None]
    eye = np.eye(k)
    basis = _sym_basis(k)
    Gt = Gt.reshape(-1, k, k)
    C = C.reshape(-1, k, k)
    s = s.reshape(-1)
    G = linalg.psd_project(Gt)
    if G_init is not None:
        warm = np.asarray(G_init, dtype=float).reshape(-1, k, k)
        usable = np.linalg.eigvalsh(warm + 2.0 * s[:, None, None] * eye)[:, 0] > 0
        G[usable] = warm[usable]
    scale = 1.0 + linalg.frob(Gt) + np.sqrt(np.abs(np.trace(C, axis1=-2, axis2=-1)))
    idx = np.arange(len(G))
    F, Hinv, Phi, V, omega = _residual(G, Gt, C, s, eye)
    merit = linalg.frob(F)
    keep = merit > tol * scale
    idx, F, Hinv, Phi, V, omega, merit = (a[keep] for a in (idx, F, Hinv, Phi, V, omega, merit))
    steps = 0
    while len(idx):
        steps += 1
        if steps > MAX_STEPS:
            raise NumericError(
                "matrix prox did not converge",
                residual=float(np.max(merit / scale[idx])),
                cells=len(idx),
            )
        Gi, Gt_i, C_i, s_i = G[idx], Gt[idx], C[idx], s[idx]
        Vt = np.swapaxes(V, -1, -2)
        cols = []
        for E in basis:
            dphi = -(Hinv @ E @ Phi + Phi @ E @ Hinv)
            cols.append(E - V @ (omega * (Vt @ dphi @ V)) @ Vt)
        cols = np.stack(cols, axis=1)  # DF applied to each basis element
        J = np.einsum("aij,cbij->cab", basis, cols)
        rhs = -np.einsum("aij,cij->ca", basis, F)
        dG = np.einsum("ca,aij->cij", np.linalg.solve(J, rhs[..., None])[..., 0], basis)
        alpha = np.ones(len(idx))
        accepted = np.zeros(len(idx), dtype=bool)
        newG = Gi.copy()
        for _ in range(40):
            trial = Gi + alpha[:, None, None] * dG
            ok_dom = np.linalg.eigvalsh(trial + 2.0 * s_i[:, None, None] * eye)[:, 0] > 0
            safe = np.where(ok_dom[:, None, None], trial, Gi)
            mt = linalg.frob(_residual(safe, Gt_i, C_i, s_i, eye)[0])
            good = ok_dom & (mt <= (1.0 - 1e-4 * alpha) * merit) & ~accepted
            newG[good] = trial[good]
            accepted |= good
            if np.all(accepted):
                break
            alpha = np.where(accepted, alpha, 0.5 * alpha)
        # a stalled line search falls back to a damped fixed-point step
        stalled = ~accepted
        if np.any(stalled):
            newG[stalled] = 0.5 * Gi[stalled] + 0.5 * linalg.psd_project(Gt_i[stalled] + Phi[stalled])
        G[idx] = newG
        F, Hinv, Phi, V, omega = _residual(newG, Gt_i, C_i, s_i, eye)
        merit = linalg.frob(F)
        keep = merit > tol * scale[idx]
        idx, F, Hinv, Phi, V, omega, merit = (a[keep] for a in (idx, F, Hinv, Phi, V, omega, merit))
    H = G + 2.0 * s[:, None, None] * eye
    Hinv = np.linalg.inv(H)
    out = linalg.psd_project(Gt + s[:, None, None] * linalg.sym(Hinv @ C @ Hinv))
    return out.reshape(batch + (k, k))


def cell_prox(Gt, qt, Rt, sigma, G_init=None):
    """Proximal map of ``sigma * Tr(G^{-1}(q q^T + R R^T))`` over ``G >= 0``, batched over cells.

    Minimizes ``1/2|G - Gt|^2 + 1/2|q - qt|^2 + 1/2|R - Rt|^2 + sigma f(G, q, R)``.

    Parameters
    ----------
    Gt : ndarray (..., k, k)
        Symmetric input for the density block.
    qt : ndarray (..., k) or None
        Transport momentum; ``None`` for reaction-only problems.
    Rt : ndarray (..., k, k)
        Reaction momentum (not necessarily symmetric).
    sigma : float or ndarray (...)
        Positive weight.
    G_init : ndarray (..., k, k), optional
        Warm start for the inner Newton iteration.

    Returns
    -------
    G, q, R
        ``q`` is ``None`` when ``qt`` is.
    """
    Gt = linalg.sym(np.asarray(Gt, dtype=float))
    Rt = np.asarray(Rt, dtype=float)
    k = Gt.shape[-1]
    Mt = Rt if qt is None else np.concatenate([np.asarray(qt, dtype=float)[..., :, None], Rt], axis=-1)
    C = Mt @ np.swapaxes(Mt, -1, -2)
    s = np.asarray(sigma, dtype=float)
    G = prox_g(Gt, C, s, G_init=G_init)
    H = G + 2.0 * np.broadcast_to(s, Gt.shape[:-2])[..., None, None] * np.eye(k)
    M = G @ np.linalg.solve(H, Mt)
    if qt is None:
        return G, None, M
    return G, M[..., 0], M[..., 1:]


def kkt_residual(G, q, R, Gt, qt, Rt, sigma):
    """Natural residual of the prox optimality system, per cell.

    Combines ``|G - Proj(G - grad_G)|`` with the momentum stationarity
    ``|M - Mt + 2 sigma G^+ M|`` written multiplicatively as
    ``|(G + 2 sigma I) M - G Mt|`` so it stays finite on singular ``G``.
    """
    k = G.shape[-1]
    s = np.broadcast_to(np.asarray(sigma, dtype=float), G.shape[:-2])[..., None, None]
    M = R if q is None else np.concatenate([q[..., :, None], R], axis=-1)
    Mt = Rt if qt is None else np.concatenate([qt[..., :, None], Rt], axis=-1)
    H = G + 2.0 * s * np.eye(k)
    mom = linalg.frob(H @ M - G @ Mt)
    C = Mt @ np.swapaxes(Mt, -1, -2)
    Hinv = np.linalg.inv(H)
    Phi = s * linalg.sym(Hinv @ C @ Hinv)
    dens = linalg.frob(G - linalg.psd_project(Gt + Phi))
    return dens + mom


def perspective(G, q, R, tol=1e-12, leak_tol=1e-16):
    """``Tr(G^+ (q q^T + R R^T))`` per cell.

    Eigenvalues below ``tol * lambda_max`` count as null directions; momentum
    there with squared norm above ``leak_tol`` makes the cell cost ``inf``.
    """
    M = R if q is None else np.concatenate([q[..., :, None], R], axis=-1)
    w, V = np.linalg.eigh(linalg.sym(G))
    Mr = np.swapaxes(V, -1, -2) @ M
    rows = np.sum(Mr**2, axis=-1)
    top = np.maximum(np.max(np.abs(w), axis=-1, keepdims=True), 1e-300)
    null = w <= tol * top
    with np.errstate(divide="ignore"):
        terms = np.where(null, 0.0, rows / np.where(null, 1.0, w))
    leak = np.sum(np.where(null, rows, 0.0), axis=-1)
    out = terms.sum(axis=-1)
    return np.where(leak > leak_tol, np.inf, out)
