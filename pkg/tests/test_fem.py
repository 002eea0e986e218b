import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, linalg

from mems_quench.fem import (
    BoundaryCondition,
    Grid1D,
    ModelSpec,
    Quenched,
    SingularSystemError,
    SolverState,
    SymTridiag,
    assemble_mass,
    assemble_noise_load,
    assemble_reaction,
    assemble_stiffness,
    boundary_load,
    run_block,
    simulate_path,
    step,
    write_realizations_csv,
    write_snapshots_csv,
)
from mems_quench.fem import _Integrator
from mems_quench.noise import derive_seed, make_generator
from mems_quench.tridiag import ldl_factor, ldl_solve

DIRICHLET = BoundaryCondition.dirichlet()
ROBIN = BoundaryCondition.robin(1.0)


def test_grid():
    g = Grid1D(102)
    assert g.dx * g.M == pytest.approx(1.0, abs=1e-15)
    assert np.all(np.diff(g.nodes) > 0) and g.nodes[-1] == 1.0
    with pytest.raises(ValueError):
        Grid1D(2)


def test_mass_interior_row():
    g = Grid1D(102)
    A = assemble_mass(g, DIRICHLET).to_dense()
    assert A.shape == (101, 101)
    np.testing.assert_allclose(A[50, 49:52], np.array([1 / 6, 2 / 3, 1 / 6]) / 102, rtol=1e-15)
    assert A[-1, -1] == pytest.approx(2 / 3 / 102)


@pytest.mark.parametrize("M", [3, 7, 40])
def test_mass_rows_sum_to_dx(M):
    A = assemble_mass(Grid1D(M), ROBIN).to_dense()
    dx = 1.0 / M
    np.testing.assert_allclose(A[1:-1].sum(axis=1), dx, rtol=1e-14)
    np.testing.assert_allclose(A[[0, -1]].sum(axis=1), dx / 2, rtol=1e-14)


def test_robin_mass_is_spd():
    A = assemble_mass(Grid1D(4), ROBIN).to_dense()
    assert A.shape == (5, 5)
    np.testing.assert_array_equal(A, A.T)
    assert A[0, 0] == pytest.approx(0.25 / 3)
    assert np.all(np.linalg.eigvalsh(A) > 0)


def test_stiffness_interior_row():
    B = assemble_stiffness(Grid1D(102), DIRICHLET).to_dense()
    np.testing.assert_allclose(B[10, 9:12], np.array([-1.0, 2.0, -1.0]) * 102, rtol=1e-15)


def test_neumann_stiffness_kills_constants():
    B = assemble_stiffness(Grid1D(9), BoundaryCondition.robin(0.0))
    np.testing.assert_allclose(B.matvec(np.ones(10)), 0.0, atol=1e-12)


def test_stiffness_definiteness():
    for bc in (DIRICHLET, ROBIN):
        B = assemble_stiffness(Grid1D(12), bc).to_dense()
        np.testing.assert_array_equal(B, B.T)
        assert np.all(np.linalg.eigvalsh(B) > 0)


def test_robin_pencil_eigenvalue_small_grid():
    s = 1.3065423741888058  # s tan(s/2) = 1
    g = Grid1D(8)
    lam = linalg.eigh(assemble_stiffness(g, ROBIN).to_dense(), assemble_mass(g, ROBIN).to_dense(),
                      eigvals_only=True)[0]
    assert lam == pytest.approx(s * s, rel=0.01)


def test_negative_beta_rejected():
    with pytest.raises(ValueError):
        BoundaryCondition.robin(-1.0)


def test_reaction_at_rest():
    g = Grid1D(16)
    b1 = assemble_reaction(np.zeros(15), ModelSpec(lam=1.0), 0.0, g)
    np.testing.assert_allclose(b1, g.dx, rtol=1e-14)
    b2 = assemble_reaction(np.zeros(15), ModelSpec(lam=2.0), 0.0, g)
    np.testing.assert_array_equal(b2, 2.0 * b1)


def test_reaction_against_adaptive_quadrature():
    g = Grid1D(16)
    x = g.nodes
    U = 0.5 * x * (1 - x)
    b = assemble_reaction(U[1:-1], ModelSpec(lam=1.0), 0.0, g)
    u_h = lambda s: np.interp(s, x, U)
    for i in range(1, 16):
        phi = lambda s: max(0.0, 1.0 - abs(s - x[i]) / g.dx)
        ref, _ = integrate.quad(lambda s: phi(s) / (1 - u_h(s)) ** 2, x[i - 1], x[i + 1],
                                points=[x[i]], epsabs=0, epsrel=1e-13)
        assert b[i - 1] == pytest.approx(ref, rel=1e-6)


def test_reaction_with_potential_and_damping():
    g = Grid1D(10)
    spec = ModelSpec(lam=1.5, gamma=0.7, h_exponent=0.5)
    b = assemble_reaction(np.zeros(9), spec, 0.3, g)
    x = g.nodes
    # sqrt(x) is not smooth on the first element, so Gauss is less accurate there
    for i, rel in ((1, 1e-3), (5, 1e-5), (9, 1e-5)):
        phi = lambda s: max(0.0, 1.0 - abs(s - x[i]) / g.dx)
        ref, _ = integrate.quad(lambda s: 1.5 * math.exp(-2.1 * 0.3) * math.sqrt(s) * phi(s),
                                x[i - 1], x[i + 1], points=[x[i]])
        assert b[i - 1] == pytest.approx(ref, rel=rel)


def test_reaction_signals_quench():
    g = Grid1D(8)
    a = np.full(7, 0.2)
    a[3] = 0.995
    with pytest.raises(Quenched) as exc:
        assemble_reaction(a, ModelSpec(lam=1.0), 0.0, g)
    assert exc.value.max_value == 0.995


def test_noise_load_cases():
    g = Grid1D(12)
    assert not assemble_noise_load(np.full(11, 0.3), 1.0, np.zeros(13), g, DIRICHLET).any()
    np.testing.assert_allclose(
        assemble_noise_load(np.ones(13), 1.0, np.full(13, 0.4), g, ROBIN), 0.0, atol=1e-16)
    b = assemble_noise_load(np.zeros(11), 1.0, np.ones(13), g, DIRICHLET)
    np.testing.assert_allclose(b, g.dx, rtol=1e-14)
    with pytest.raises(ValueError):
        assemble_noise_load(np.zeros(11), 1.0, np.ones(12), g, DIRICHLET)


def test_boundary_load():
    g = Grid1D(6)
    spec = ModelSpec(lam=1.0, bc=BoundaryCondition.robin(2.0, 0.5), g1=0.1, g_omega=3.0)
    b = boundary_load(spec, g, 0.4)
    assert b[0] == b[-1] == pytest.approx(0.5 * (1 + 0.1 * math.cos(1.2)))
    assert not b[1:-1].any()
    assert not boundary_load(ModelSpec(lam=1.0), g, 0.0).any()


def test_step_keeps_rest_state():
    g = Grid1D(10)
    A, B = assemble_mass(g, DIRICHLET), assemble_stiffness(g, DIRICHLET)
    out = step(SolverState(np.zeros(9)), A, B, ModelSpec(lam=0.0), g, np.zeros(11), 0.01)
    assert not out.a.any() and out.n == 1 and out.t == pytest.approx(0.01)


def _random_case(bc, M, seed):
    g = Grid1D(M)
    rng = make_generator(seed)
    U = 0.6 * rng.random(M + 1)
    dW = 0.1 * rng.standard_normal(M + 1)
    if bc.is_dirichlet:
        U[[0, -1]] = 0.0
    dW[[0, -1]] = 0.0
    return g, U, dW


@pytest.mark.parametrize("bc", [DIRICHLET, ROBIN], ids=["dirichlet", "robin"])
@pytest.mark.parametrize("M", [4, 8, 16])
def test_step_matches_dense_solve(bc, M):
    spec = ModelSpec(lam=1.2, kappa=0.7, gamma=0.3, bc=bc, g1=0.2, g_omega=5.0, h_exponent=0.5)
    g, U, dW = _random_case(bc, M, seed=M)
    dofs = bc.dofs(g)
    A, B = assemble_mass(g, bc), assemble_stiffness(g, bc)
    t, dt = 0.25, 0.01
    K = A.to_dense() + dt * spec.g(t) * B.to_dense()
    rhs = (A.to_dense() @ U[dofs]
           + dt * (assemble_reaction(U[dofs], spec, t, g) + boundary_load(spec, g, t))
           + assemble_noise_load(U[dofs], spec.kappa, dW, g, bc))
    dense = linalg.lu_solve(linalg.lu_factor(K), rhs)
    out = step(SolverState(U[dofs], t), A, B, spec, g, dW, dt)
    np.testing.assert_allclose(out.a, dense, rtol=1e-12, atol=1e-14)
    fused = _Integrator(spec, g).advance(U[None, :], t, dt, dW[None, :])[0]
    np.testing.assert_allclose(fused[dofs], dense, rtol=1e-12, atol=1e-14)
    if bc.is_dirichlet:
        assert fused[0] == fused[-1] == 0.0


@settings(max_examples=30, deadline=None)
@given(n=st.integers(2, 40), seed=st.integers(0, 2**32 - 1))
def test_ldl_solver_against_numpy(n, seed):
    rng = make_generator(seed)
    off = rng.uniform(-1, 1, n - 1)
    diag = np.abs(np.concatenate([[0], off])) + np.abs(np.concatenate([off, [0]])) + rng.uniform(0.1, 2, n)
    T = SymTridiag(diag, off)
    rhs = rng.standard_normal((3, n))
    x = T.solve(rhs)
    np.testing.assert_allclose(x, np.linalg.solve(T.to_dense(), rhs.T).T, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(T.matvec(x), rhs, atol=1e-10)
    np.testing.assert_allclose(T.solve(rhs[0]), x[0], rtol=1e-14)


def test_ldl_rejects_indefinite():
    with pytest.raises(SingularSystemError):
        SymTridiag(np.array([1.0, -1.0, 2.0]), np.array([0.0, 0.0])).factor()
    with pytest.raises(SingularSystemError):
        SymTridiag(np.array([1.0, 1.0]), np.array([1.0])).factor()


def test_ldl_factor_reconstructs():
    diag, off = np.array([4.0, 5.0, 6.0, 3.0]), np.array([1.0, -2.0, 0.5])
    l, d = ldl_factor(diag, off)
    L = np.eye(4) + np.diag(l[1:], -1)
    np.testing.assert_allclose(L @ np.diag(d) @ L.T, SymTridiag(diag, off).to_dense(), atol=1e-14)
    np.testing.assert_allclose(ldl_solve(l, d, np.ones(4)),
                               np.linalg.solve(SymTridiag(diag, off).to_dense(), np.ones(4)))


def _heat_error(M, N, T=0.1):
    x = Grid1D(M).nodes
    spec = ModelSpec(lam=0.0, u0_nodal=tuple(0.5 * np.sin(np.pi * x)))
    res = run_block(spec, Grid1D(M), N, 1, T, [0])
    return np.max(np.abs(res.final_states[0] - 0.5 * math.exp(-math.pi**2 * T) * np.sin(np.pi * x)))


def test_heat_kernel_decay_rate():
    # dt = dx^2 so dt + dx^2 drops by 4 per level
    errs = [_heat_error(M, int(0.1 * M * M)) for M in (10, 20, 40, 80)]
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all((ratios > 3.0) & (ratios < 5.0))
    assert errs[-1] < 10 * (0.1 / 640 + 1 / 80**2)


def test_unforced_l2_norm_decreases():
    g = Grid1D(20)
    x = g.nodes
    spec = ModelSpec(lam=0.0, u0_nodal=tuple(0.9 * np.sin(np.pi * x) ** 3))
    A, B = assemble_mass(g, DIRICHLET), assemble_stiffness(g, DIRICHLET)
    state = SolverState(spec.initial_nodal(g)[1:-1])
    norms = []
    for _ in range(50):
        norms.append(state.a @ A.matvec(state.a))
        state = step(state, A, B, spec, g, np.zeros(21), 0.005)
    assert np.all(np.diff(norms) < 0)


def test_deterministic_comparison_in_lambda():
    g = Grid1D(30)
    lo = simulate_path(ModelSpec(lam=1.0), g, 400, 1, 0.4, seed=0)
    hi = simulate_path(ModelSpec(lam=1.3), g, 400, 1, 0.4, seed=0)
    assert np.all(lo.max_history[1] <= hi.max_history[1] + 1e-15)


def test_unforced_path_decays():
    r = simulate_path(ModelSpec(lam=0.0, kappa=0.0, u0_amplitude=0.9), Grid1D(20), 200, 1, 1.0, 3)
    assert not r.quenched and r.T_q is None
    assert r.final_max < 0.9 * 0.25 * math.exp(-math.pi**2 * 0.9)


def test_supercritical_noisy_path_quenches():
    r = simulate_path(ModelSpec(lam=2.5, kappa=1.0), Grid1D(102), 2000, 1, 2.0, seed=5)
    assert r.quenched and 0 < r.T_q <= 2.0
    assert r.final_max >= 0.99


def test_deterministic_quench_time_lambda2():
    r = simulate_path(ModelSpec(lam=2.0), Grid1D(102), 10_000, 1, 1.0, seed=0)
    assert r.quenched and r.T_q == pytest.approx(0.3205, abs=3e-3)


def test_path_is_reproducible():
    spec, g = ModelSpec(lam=1.5, kappa=0.5), Grid1D(40)
    a = simulate_path(spec, g, 500, 2, 1.0, seed=77)
    b = simulate_path(spec, g, 500, 2, 1.0, seed=77)
    assert a.T_q == b.T_q and a.final_max == b.final_max
    np.testing.assert_array_equal(a.max_history[1], b.max_history[1])


def test_block_rows_match_single_paths():
    spec, g = ModelSpec(lam=2.0, kappa=0.5), Grid1D(34)
    seeds = [derive_seed(4, i) for i in range(7)]
    block = run_block(spec, g, 800, 1, 1.0, seeds, chunk=13)
    for i, s in enumerate(seeds):
        r = simulate_path(spec, g, 800, 1, 1.0, s)
        assert r.quenched == block.quenched[i]
        assert r.final_max == block.max_u[i]
        assert (r.T_q is None and np.isnan(block.T_q[i])) or r.T_q == block.T_q[i]


def test_robin_scalar_noise_block_rows_match():
    spec = ModelSpec(lam=0.3, kappa=1.0, bc=ROBIN, noise_kind="scalar")
    g = Grid1D(20)
    block = run_block(spec, g, 300, 1, 1.0, [1, 2, 3])
    for i, s in enumerate([1, 2, 3]):
        assert simulate_path(spec, g, 300, 1, 1.0, s).final_max == block.max_u[i]


def test_quenched_invariants():
    spec, g = ModelSpec(lam=1.5, kappa=0.1), Grid1D(30)
    res = run_block(spec, g, 2000, 1, 2.0, [derive_seed(1, i) for i in range(5)])
    assert res.quenched.all()
    assert np.all((res.T_q > 0) & (res.T_q <= 2.0))
    assert np.all(res.max_u >= spec.threshold)
    assert np.isnan(res.final_states).all()


def test_refined_substeps_locate_quench_on_the_fine_grid():
    spec, g = ModelSpec(lam=2.0, kappa=0.5), Grid1D(30)
    coarse = simulate_path(spec, g, 100, 8, 1.0, seed=0)
    fine = simulate_path(spec, g, 800, 1, 1.0, seed=0)
    # refining from the start reproduces the fine run on the shared noise
    always = simulate_path(spec, g, 100, 8, 1.0, seed=0, refine_above=0.0)
    assert always.T_q == pytest.approx(fine.T_q, abs=1e-12)
    late = simulate_path(spec, g, 100, 8, 1.0, seed=0, refine_above=0.5)
    assert abs(late.T_q - fine.T_q) <= abs(coarse.T_q - fine.T_q)


def test_time_dependent_diffusion_matches_manual_loop():
    spec = ModelSpec(lam=0.8, bc=ROBIN, g1=0.1, g_omega=10.0, h_exponent=0.5)
    g = Grid1D(12)
    A, B = assemble_mass(g, ROBIN), assemble_stiffness(g, ROBIN)
    state = SolverState(spec.initial_nodal(g))
    for _ in range(40):
        state = step(state, A, B, spec, g, np.zeros(13), 0.005)
    res = run_block(spec, g, 40, 1, 0.2, [0])
    np.testing.assert_allclose(res.final_states[0], state.a, rtol=1e-12)


def test_simulate_rejects_bad_horizon():
    with pytest.raises(ValueError):
        simulate_path(ModelSpec(lam=1.0), Grid1D(10), 10, 1, 0.0, seed=0)


@pytest.mark.parametrize("kwargs", [dict(lam=-1.0), dict(lam=1.0, kappa=-0.1),
                                    dict(lam=1.0, quench_delta=1.5),
                                    dict(lam=1.0, g0=1.0, g1=1.0),
                                    dict(lam=1.0, noise_kind="white")])
def test_model_validation(kwargs):
    with pytest.raises(ValueError):
        ModelSpec(**kwargs)


def test_initial_profile_must_stay_below_one():
    with pytest.raises(ValueError):
        ModelSpec(lam=1.0, u0_amplitude=5.0).initial_nodal(Grid1D(10))


def test_csv_outputs(tmp_path):
    g = Grid1D(6)
    r = simulate_path(ModelSpec(lam=1.0), g, 20, 1, 0.1, seed=1, snapshot_every=10)
    write_snapshots_csv(tmp_path / "s.csv", r, g, header=["run: test"])
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "# run: test" and lines[1] == "t,x,u"
    assert len(lines) == 2 + 3 * 7
    write_realizations_csv(tmp_path / "r.csv", [r])
    rows = (tmp_path / "r.csv").read_text().splitlines()
    assert rows[0] == "seed,quenched,T_q,max_u"
    assert rows[1].split(",")[:3] == ["1", "0", ""]
