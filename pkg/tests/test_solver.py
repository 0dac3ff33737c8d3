import numpy as np
import pytest

from conftest import random_spd, random_sym
from kbures import linalg, solver
from kbures.closed_form import pointwise_hellinger_distance, sqrt_path_energy
from kbures.errors import InputError, NumericError
from kbures.measures import GridSpec, MatrixMeasure, synth_measure, total_mass, zero_like
from kbures.prox import cell_prox
from kbures.solver import (
    ContinuityProjector,
    SolverConfig,
    TransportPath,
    continuity_field,
    continuity_residual,
    discretize,
    path_energy,
    project_onto_continuity,
    sample_path,
    slice_energies,
    solve,
)

SIGNED_PERMUTATIONS_2D = [
    np.array([[0.0, 1.0], [1.0, 0.0]]),
    np.diag([-1.0, 1.0]),
    np.array([[0.0, -1.0], [1.0, 0.0]]),
]


def random_path(grid, nt, seed, k=None):
    rng = np.random.default_rng(seed)
    k = k or grid.d
    S = grid.shape
    G = random_sym(rng, k, batch=(nt + 1,) + S) + 2 * np.eye(k)
    return TransportPath(grid, G, rng.normal(size=(nt,) + S + (grid.d,)), rng.normal(size=(nt,) + S + (k, k)))


def dense_derivative(grid, axis):
    """Spectral derivative along ``axis`` as an explicit matrix on flattened cells (DFT written out)."""
    n = grid.n
    j = np.arange(n)
    F = np.exp(-2j * np.pi * np.outer(j, j) / n)
    k = 2 * np.pi * np.where(j <= n // 2, j, j - n).astype(float)
    if n % 2 == 0:
        k[n // 2] = 0.0
    D1 = (np.conj(F).T @ np.diag(1j * k) @ F / n).real
    mats = [np.eye(n)] * grid.d
    mats[axis] = D1
    out = mats[0]
    for m in mats[1:]:
        out = np.kron(out, m)
    return out


def dense_constraint(path):
    """Constraint defect assembled cell by cell from explicit derivative matrices."""
    grid, nt, d = path.grid, path.nt, path.grid.d
    cells = grid.cells
    D = [dense_derivative(grid, a) for a in range(d)]
    G = path.G.reshape(nt + 1, cells, path.k, path.k)
    q = path.q.reshape(nt, cells, d)
    R = path.R.reshape(nt, cells, path.k, path.k)
    out = np.zeros((nt, cells, path.k, path.k))
    for t in range(nt):
        J = np.zeros((cells, d, d))
        for i in range(d):
            for jj in range(d):
                J[:, i, jj] = D[jj] @ q[t, :, i]
        out[t] = (G[t + 1] - G[t]) * nt + 0.5 * (J + np.swapaxes(J, -1, -2)) - 0.5 * (R[t] + np.swapaxes(R[t], -1, -2))
    return out.reshape((nt,) + grid.shape + (path.k, path.k))


def flatten(path):
    return np.concatenate([path.G[1:-1].ravel(), path.q.ravel(), path.R.ravel()])


def unflatten(vec, like):
    out = like.copy()
    a = like.G[1:-1].size
    b = a + like.q.size
    out.G[1:-1] = vec[:a].reshape(like.G[1:-1].shape)
    out.q = vec[a:b].reshape(like.q.shape)
    out.R = vec[b:].reshape(like.R.shape)
    return out


def dense_projection(path, transport=True):
    """Least-squares projection with the constraint matrix assembled column by column."""
    x0 = flatten(path)
    base = path.copy()
    base.G[1:-1] = 0
    base.q[...] = 0
    base.R[...] = 0
    c = continuity_field(base, transport).ravel()
    cols = []
    for i in range(len(x0)):
        e = np.zeros_like(x0)
        e[i] = 1
        cols.append(continuity_field(unflatten(e, base), transport).ravel() - c)
    L = np.stack(cols, axis=1)
    if not transport:
        nq = path.q.size
        a = path.G[1:-1].size
        L[:, a : a + nq] = 0  # q is pinned to zero
        x0[a : a + nq] = 0
    r = L @ x0 + c
    x = x0 - np.linalg.pinv(L) @ r
    return unflatten(x, path)


@pytest.mark.parametrize("grid", [GridSpec(1, 4), GridSpec(2, 2)])
def test_continuity_residual_matches_dense(grid):
    path = random_path(grid, 3, seed=1)
    np.testing.assert_allclose(continuity_field(path), dense_constraint(path), atol=1e-12)
    r = dense_constraint(path)
    expected = np.sqrt(np.mean(np.sum(r**2, axis=(-2, -1))))
    assert continuity_residual(path) == pytest.approx(expected, rel=1e-12)


def test_continuity_residual_trivial_cases(line):
    G = synth_measure(line, "bump", width=0.2)
    nt = 8
    const = TransportPath(line, np.broadcast_to(G.values, (nt + 1,) + G.values.shape).copy(), np.zeros((nt, 16, 1)), np.zeros((nt, 16, 1, 1)))
    assert continuity_residual(const) == 0.0
    ts = np.linspace(0, 1, nt + 1)
    nodes = (1 - ts)[:, None, None, None] ** 2 * G.values
    R = (nodes[1:] - nodes[:-1]) * nt
    feasible = TransportPath(line, nodes, np.zeros((nt, 16, 1)), R)
    assert continuity_residual(feasible) <= 1e-13


@pytest.mark.parametrize("grid,nt", [(GridSpec(1, 1), 2), (GridSpec(1, 4), 3), (GridSpec(2, 2), 3), (GridSpec(3, 2), 2)])
@pytest.mark.parametrize("transport", [True, False])
def test_projection_matches_dense_oracle(grid, nt, transport):
    path = random_path(grid, nt, seed=7)
    fast = project_onto_continuity(path, transport=transport)
    slow = dense_projection(path, transport=transport)
    for a, b in zip((fast.G, fast.q, fast.R), (slow.G, slow.q, slow.R)):
        np.testing.assert_allclose(a, b, atol=1e-10)


@pytest.mark.parametrize("transport", [True, False])
def test_projection_is_idempotent_and_feasible(transport):
    grid = GridSpec(2, 6)
    path = random_path(grid, 5, seed=3)
    once = project_onto_continuity(path, transport)
    scale = 1 + np.abs(path.G).max()
    assert continuity_residual(once, transport) <= 1e-10 * scale
    twice = project_onto_continuity(once, transport)
    for a, b in zip((once.G, once.q, once.R), (twice.G, twice.q, twice.R)):
        np.testing.assert_allclose(a, b, atol=1e-10 * scale)
    np.testing.assert_array_equal(once.G[0], path.G[0])
    np.testing.assert_array_equal(once.G[-1], path.G[-1])
    if not transport:
        assert np.all(once.q == 0)


def test_projection_fixes_feasible_points(line):
    G0 = synth_measure(line, "random", seed=1)
    G1 = synth_measure(line, "random", seed=2)
    path = discretize(G0, G1, SolverConfig(nt=6))
    assert continuity_residual(path) < 1e-12
    again = project_onto_continuity(path)
    np.testing.assert_allclose(again.G, path.G, atol=1e-12)
    np.testing.assert_allclose(again.R, path.R, atol=1e-12)


def test_discretize_contract(line):
    G = synth_measure(line, "random", seed=4)
    path = discretize(G, G, SolverConfig(nt=4))
    assert np.all(path.G == G.values)
    assert np.all(path.q == 0) and np.all(path.R == 0)
    H = synth_measure(line, "random", seed=5)
    path = discretize(G, H, SolverConfig(nt=2))
    np.testing.assert_array_equal(path.G[0], G.values)
    np.testing.assert_array_equal(path.G[-1], H.values)
    assert path_energy(path) == pytest.approx(sqrt_path_energy(G, H, 2).energy, rel=1e-12)
    with pytest.raises(InputError):
        discretize(G, synth_measure(GridSpec(1, 8), "constant"), SolverConfig(nt=4))
    with pytest.raises(InputError):
        discretize(MatrixMeasure(line, np.ones((16, 2, 2))), MatrixMeasure(line, np.ones((16, 2, 2))), SolverConfig(nt=4))


def test_config_validation():
    for bad in ({"nt": 1}, {"tau": 0.0}, {"sigma": -1.0}, {"theta": 2.0}, {"mode": "wfr"}, {"max_iter": -1}):
        with pytest.raises(InputError):
            SolverConfig(**bad)


def test_path_energy_basics(line):
    G = synth_measure(line, "constant")
    nt = 4
    path = TransportPath(line, np.broadcast_to(G.values, (nt + 1, 16, 1, 1)).copy(), np.zeros((nt, 16, 1)), np.zeros((nt, 16, 1, 1)))
    assert path_energy(path) == 0.0
    path.G[1:-1] = 0.0
    path.R[1] = 1.0
    assert path_energy(path) == np.inf


def test_path_energy_scalar_quadrature():
    # g(t) = (1 + t)^2 with R = g': continuum energy int g'^2 / g = 4
    grid = GridSpec(1, 1)

    def discrete(nt):
        ts = np.linspace(0, 1, nt + 1)
        G = ((1 + ts) ** 2)[:, None, None, None]
        R = np.diff(G, axis=0) * nt
        return path_energy(TransportPath(grid, G, np.zeros((nt, 1, 1)), R))

    errs = [abs(discrete(nt) - 4.0) for nt in (8, 16, 32)]
    assert errs[2] < 1e-3
    assert errs[1] / errs[2] == pytest.approx(4.0, rel=0.1)


def test_path_energy_geodesic_to_zero_first_order(line):
    # the interval average of a vanishing endpoint costs an O(1/nt) deficit
    G = synth_measure(line, "bump", width=0.2, floor=0.3)
    m = total_mass(G)

    def deficit(nt):
        ts = np.linspace(0, 1, nt + 1)
        nodes = (1 - ts)[:, None, None, None] ** 2 * G.values
        path = TransportPath(line, nodes, np.zeros((nt, 16, 1)), np.diff(nodes, axis=0) * nt)
        return 4 * m - path_energy(path)

    d16, d32, d64 = deficit(16), deficit(32), deficit(64)
    assert 0 < d64 < d32 < d16
    assert d16 / d32 == pytest.approx(2.0, rel=0.05)


def test_sample_path(line):
    G0, G1 = synth_measure(line, "random", seed=1), synth_measure(line, "random", seed=2)
    path = discretize(G0, G1, SolverConfig(nt=4))
    assert np.array_equal(sample_path(path, 0.0).values, G0.values)
    assert np.array_equal(sample_path(path, 1.0).values, G1.values)
    assert np.array_equal(sample_path(path, 0.5).values, path.G[2])
    mid = sample_path(path, 0.375).values
    np.testing.assert_allclose(mid, 0.5 * (path.G[1] + path.G[2]))
    with pytest.raises(InputError):
        sample_path(path, 1.5)


def test_solve_zero_endpoints(line):
    Z = zero_like(synth_measure(line, "constant"))
    report, path = solve(Z, Z, SolverConfig(nt=4))
    assert report.distance == 0.0 and report.iterations == 0 and report.converged


def test_solve_identical_endpoints(line):
    G = synth_measure(line, "random", seed=3)
    report, _ = solve(G, G, SolverConfig(nt=8))
    assert report.converged
    assert report.distance <= 1e-6


def test_solve_symmetry_and_determinism(random_pair_1d):
    a, b = random_pair_1d(3)
    cfg = SolverConfig(nt=8)
    r1, p1 = solve(a, b, cfg)
    r2, p2 = solve(b, a, cfg)
    assert r1.distance == r2.distance
    np.testing.assert_array_equal(p1.G, p2.G[::-1])
    r3, _ = solve(a, b, cfg)
    assert r3.to_dict() == r1.to_dict()


def test_solve_report_contract(random_pair_1d):
    a, b = random_pair_1d(4)
    report, path = solve(a, b, SolverConfig(nt=8))
    assert report.converged
    assert report.energy == pytest.approx(path_energy(path))
    assert report.distance == pytest.approx(np.sqrt(report.energy))
    assert report.residual < 1e-8
    assert report.max_mass <= report.mass_bound
    assert np.all(np.linalg.eigvalsh(path.G) >= -1e-12)
    np.testing.assert_array_equal(path.G[0], a.values)
    np.testing.assert_array_equal(path.G[-1], b.values)
    assert report.log and all(set(e) == {"iteration", "energy", "mismatch"} for e in report.log)


def test_iteration_cap_is_reported(random_pair_1d):
    a, b = random_pair_1d(5)
    report, _ = solve(a, b, SolverConfig(nt=8, max_iter=3, check_every=1))
    assert not report.converged and report.iterations == 3


def test_nan_raises_numeric_error(random_pair_1d, monkeypatch):
    a, b = random_pair_1d(6)

    def broken(*args, **kwargs):
        G, q, R = cell_prox(*args, **kwargs)
        return G * np.nan, q, R

    monkeypatch.setattr(solver, "cell_prox", broken)
    with pytest.raises(NumericError):
        solve(a, b, SolverConfig(nt=4))


def test_hellinger_mode_small(rng):
    grid = GridSpec(1, 4)
    a = MatrixMeasure(grid, random_sym(rng, 1, batch=(4,)) ** 2 + 0.5)
    b = MatrixMeasure(grid, random_sym(rng, 1, batch=(4,)) ** 2 + 0.5)
    report, path = solve(a, b, SolverConfig(nt=16, mode="hellinger"))
    assert np.all(path.q == 0)
    assert report.distance == pytest.approx(pointwise_hellinger_distance(a, b), rel=0.01)
    # transport can only help
    kb, _ = solve(a, b, SolverConfig(nt=16))
    assert kb.distance <= report.distance * 1.001


def test_hellinger_accepts_pointwise_matrices(rng):
    one = GridSpec(1, 1)
    A = MatrixMeasure(one, random_spd(rng, 3, floor=0.2)[None])
    B = MatrixMeasure(one, random_spd(rng, 3, floor=1.0)[None])
    report, _ = solve(A, B, SolverConfig(nt=16, mode="hellinger"))
    assert report.distance == pytest.approx(pointwise_hellinger_distance(A, B), rel=0.01)


def test_mesh_refinement_does_not_increase_energy(random_pair_1d):
    a, b = random_pair_1d(7)
    coarse, _ = solve(a, b, SolverConfig(nt=4))
    fine, _ = solve(a, b, SolverConfig(nt=8))
    assert fine.energy <= coarse.energy * 1.005


@pytest.mark.parametrize("Q", SIGNED_PERMUTATIONS_2D)
def test_operators_are_equivariant(Q):
    grid = GridSpec(2, 4)
    path = random_path(grid, 3, seed=9)
    proj = ContinuityProjector(grid, 3)
    moved_then_projected = proj(path.transformed(Q))
    projected_then_moved = proj(path).transformed(Q)
    for a, b in zip((moved_then_projected.G, moved_then_projected.q, moved_then_projected.R), (projected_then_moved.G, projected_then_moved.q, projected_then_moved.R)):
        np.testing.assert_allclose(a, b, atol=1e-10)
    assert continuity_residual(path.transformed(Q)) == pytest.approx(continuity_residual(path), rel=1e-10)
    path.G[1:-1] = linalg.psd_project(path.G[1:-1])
    assert path_energy(path.transformed(Q)) == pytest.approx(path_energy(path), rel=1e-10)
    Gt, qt, Rt = path.G[1], path.q[0], path.R[0]
    G, q, R = cell_prox(Gt, qt, Rt, 0.4)
    Gq, qq, Rq = cell_prox(Q @ Gt @ Q.T, qt @ Q.T, Q @ Rt @ Q.T, 0.4)
    np.testing.assert_allclose(Gq, Q @ G @ Q.T, atol=1e-10)
    np.testing.assert_allclose(qq, q @ Q.T, atol=1e-10)
    np.testing.assert_allclose(Rq, Q @ R @ Q.T, atol=1e-10)


def test_holder_continuity_of_solution():
    grid = GridSpec(1, 8)
    a = synth_measure(grid, "bump", center=[0.3], width=0.15, floor=0.2)
    b = synth_measure(grid, "bump", center=[0.6], width=0.15, floor=0.4)
    report, path = solve(a, b, SolverConfig(nt=8))
    s, t = 0.25, 0.75
    sub, _ = solve(sample_path(path, s), sample_path(path, t), SolverConfig(nt=8))
    assert sub.distance <= np.sqrt(report.energy) * abs(t - s) ** 0.5 * 1.03


def test_slice_energies_sum(random_pair_1d):
    a, b = random_pair_1d(8)
    _, path = solve(a, b, SolverConfig(nt=8))
    assert np.sum(slice_energies(path)) / path.nt == pytest.approx(path_energy(path), rel=1e-12)
