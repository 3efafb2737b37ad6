import math
import warnings

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from xosbpd.discretization import (
    NodeSet, build_families, generate_plate_with_hole, generate_uniform_grid,
)
from xosbpd.errors import KernelFallback, NotConverged, NumericalBlowup
from xosbpd.kernel import compute_kernels
from xosbpd.mechanics import Body, MaterialParams, MechState
from xosbpd.runner import edge_constraints
from xosbpd.solver import (
    AdrState, Constraints, ExplicitConfig, adr_damping, adr_mass, adr_step, assemble_stiffness,
    bond_stiffness, explicit_step, run_dynamic, run_quasi_static, stable_time_step,
    stiffness_row_abs_sums,
)

ALU = MaterialParams(70e9, 0.33, 2700.0, regime="plane_strain")
UNIT = MaterialParams(1.0, 0.25, 1.0, regime="plane_strain", critical_stretch=1.0)


def make_body(nodes, material, model="xosbpd"):
    g = build_families(nodes)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", KernelFallback)
        kern = compute_kernels(nodes, g, model=model)
    return Body(nodes, g, kern, material, model)


def point_state(n=1, d=1):
    z = np.zeros((n, d))
    return MechState(z.copy(), z.copy(), z.copy(), z.copy(), np.zeros(0, bool))


# --- explicit integration --------------------------------------------------

def test_uniform_motion():
    st = point_state(1, 2)
    st.velocity = np.array([[1.5, -0.5]])
    for _ in range(10):
        explicit_step(st, np.zeros((1, 2)), UNIT, 1e-3)
    np.testing.assert_allclose(st.displacement, [[1.5e-2, -0.5e-2]], rtol=1e-14)
    assert st.step == 10 and st.time == pytest.approx(1e-2)


def test_constant_acceleration_first_step():
    st = point_state()
    explicit_step(st, np.array([[3.0]]), UNIT, 0.1)
    assert st.displacement[0, 0] == pytest.approx(3.0 * 0.01, rel=1e-15)
    assert st.velocity[0, 0] == pytest.approx(0.3, rel=1e-15)


def test_blowup_reports_step():
    st = point_state()
    st.step = 41
    with pytest.raises(NumericalBlowup) as info:
        explicit_step(st, np.array([[np.inf]]), UNIT, 0.1)
    assert info.value.step == 42


def test_constraints_override_and_release():
    st = point_state(2, 1)
    c = Constraints(np.array([[True], [False]]), velocity=np.array([[2.0], [0.0]]),
                    release_time=0.25)
    for _ in range(5):
        explicit_step(st, np.array([[-100.0], [1.0]]), UNIT, 0.1, c)
    # held at v = 2 for t < 0.25 (three steps), then free under the force
    assert st.displacement[0, 0] == pytest.approx(3 * 0.2 + (2 - 10) * 0.1 + (2 - 20) * 0.1)
    assert st.displacement[1, 0] == pytest.approx(0.01 * (1 + 2 + 3 + 4 + 5))


def chain_run(dt, t_end, k=4.0, v0=1.0):
    st = point_state(2, 1)
    st.velocity[1, 0] = v0
    for _ in range(int(round(t_end / dt))):
        s = st.displacement[1, 0] - st.displacement[0, 0]
        explicit_step(st, np.array([[k * s], [-k * s]]), UNIT, dt)
    return np.r_[st.displacement[:, 0], st.velocity[:, 0]]


def chain_oracle(t_end, k=4.0, v0=1.0):
    def rhs(_, y):
        s = y[1] - y[0]
        return [y[2], y[3], k * s, -k * s]

    sol = solve_ivp(rhs, (0, t_end), [0, 0, 0, v0], method="DOP853", rtol=1e-12, atol=1e-14)
    return sol.y[:, -1]


def test_two_node_chain_against_ode_oracle():
    dt, t_end = 0.01, 1.0
    got = chain_run(dt, t_end)
    ref = chain_oracle(t_end)
    fine = chain_run(dt / 100, t_end)
    err = np.abs(got - ref).max()
    # first-order scheme: error of order dt times the solution scale
    assert err <= 2 * dt
    assert np.abs(fine - ref).max() <= err / 50


def test_explicit_first_order_convergence():
    # terminal state (u, v): the velocity lags half a step, so the state error
    # halves with dt; displacement alone is Verlet-equivalent and superconverges
    ref = chain_oracle(1.0)
    errs = [np.abs(chain_run(0.02 / 2**k, 1.0) - ref).max() for k in range(4)]
    ratios = [a / b for a, b in zip(errs, errs[1:])]
    assert all(1.7 <= r <= 2.3 for r in ratios), ratios


def test_stable_time_step():
    nodes = generate_uniform_grid([[0, 1], [0, 1]], 0.1)
    dt = stable_time_step(nodes, ALU, 0.5)
    assert dt == pytest.approx(0.5 * 0.1 * math.sqrt(2700 / ALU.bulk_modulus))


def test_dynamic_zero_velocity_stays_at_rest():
    body = make_body(generate_uniform_grid([[0, 0.5], [0, 0.3]], 0.05), UNIT)
    res = run_dynamic(body, ExplicitConfig(0.01, 20, cadence=5))
    assert np.all(res.state.displacement == 0) and not res.state.broken.any()
    assert len(res.snapshots) == 4 and all(np.all(s.damage == 0) for s in res.snapshots)


def test_dynamic_deterministic_and_warns_large_dt():
    body = make_body(generate_uniform_grid([[0, 0.5], [0, 0.3]], 0.05), UNIT)
    runs = []
    for _ in range(2):
        st = MechState.zeros(body.nodes, body.graph)
        st.velocity[:5] = 0.1
        with pytest.warns(UserWarning, match="exceeds"):
            res = run_dynamic(body, ExplicitConfig(0.5, 10), state=st, failure=False)
        runs.append(res.state.displacement.copy())
    np.testing.assert_array_equal(runs[0], runs[1])


def test_dynamic_failure_records_history():
    body = make_body(generate_uniform_grid([[0, 0.5], [0, 0.3]], 0.05), UNIT)
    st = MechState.zeros(body.nodes, body.graph)
    st.velocity[body.nodes.positions[:, 0] > 0.25, 0] = 0.5
    res = run_dynamic(body, ExplicitConfig(0.005, 100), state=st, critical_stretch=0.01)
    assert res.broken_history and res.state.broken.any()
    steps = [h[0] for h in res.broken_history]
    assert steps == sorted(steps)
    assert sum(h[2] for h in res.broken_history) == np.count_nonzero(res.state.broken) // 2


# --- LBBPD stiffness -------------------------------------------------------

def test_bond_stiffness_axis_aligned():
    k = bond_stiffness([1.0, 0.0, 0.0], 1.0)
    kb = -k[:3, :3]
    assert kb[0, 0] == 1.0 and np.count_nonzero(kb) == 1


def test_bond_stiffness_diagonal_bond():
    k = -bond_stiffness([1.0, 1.0, 0.0], 2.0)[:3, :3]
    for a, b in ((0, 0), (0, 1), (1, 1)):
        assert k[a, b] == pytest.approx(2 / (2 * math.sqrt(2)), rel=1e-15)
    assert k[2, 2] == 0


def test_bond_stiffness_rigid_nullspace():
    rng = np.random.default_rng(8)
    for _ in range(20):
        k = bond_stiffness(rng.normal(size=3), rng.uniform(0.1, 5), *rng.uniform(0.1, 2, 2))
        np.testing.assert_array_equal(k, k.T)
        t = np.tile(rng.normal(size=3), 2)
        assert np.abs(k @ t).max() <= 1e-14 * np.abs(k).max()


def test_assembled_stiffness_small_body():
    body = make_body(generate_uniform_grid([[0, 0.5], [0, 0.4]], 0.05), ALU, "lbbpd")
    assert body.n_nodes <= 100
    K = assemble_stiffness(body).toarray()
    np.testing.assert_allclose(K, K.T, rtol=0, atol=1e-12 * np.abs(K).max())
    for a in range(2):
        t = np.zeros((body.n_nodes, 2))
        t[:, a] = 1.0
        assert np.abs(K @ t.ravel()).max() <= 1e-10 * np.abs(K).max()
    np.testing.assert_allclose(stiffness_row_abs_sums(body).ravel(), np.abs(K).sum(axis=1),
                               rtol=1e-12)
    # K is the linearization of the bond-based internal force
    rng = np.random.default_rng(9)
    u = rng.normal(size=(body.n_nodes, 2)) * 1e-9
    f = body.internal_forces(u, body.graph.broken).internal_force_density
    f = f * body.nodes.cell_measure[:, None]
    np.testing.assert_allclose(K @ u.ravel(), f.ravel(), rtol=1e-5, atol=1e-8 * np.abs(f).max())


def test_adr_mass_single_bond():
    nodes = NodeSet.from_measures(np.array([[0.0, 0.0], [1.0, 0.0]]), np.ones(2))
    nodes.horizon_radius[:] = 1.5
    body = make_body(nodes, UNIT, "lbbpd")
    k = float(body.cbond[0])
    with pytest.warns(UserWarning, match="without stiffness"):
        m = adr_mass(body, safety_factor=1.0)
    assert m[0, 0] == pytest.approx(k / 2, rel=1e-14)


def test_adr_mass_zero_row_and_safety():
    nodes = NodeSet.from_measures(np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]]), np.ones(3))
    nodes.horizon_radius[:] = 1.2
    body = make_body(nodes, UNIT, "lbbpd")
    # node 2 only has a vertical bond: its x row is zero
    with pytest.warns(UserWarning, match="median"):
        m = adr_mass(body)
    assert np.all(m > 0)
    with pytest.raises(ValueError):
        adr_mass(body, safety_factor=0.9)


# --- ADR -------------------------------------------------------------------

def test_adr_damping_guards():
    assert adr_damping(np.zeros(3), np.ones(3)) == (0.0, False)
    assert adr_damping(np.ones(3), -np.ones(3)) == (0.0, True)
    c, neg = adr_damping(np.ones(2), np.array([4.0, 4.0]))
    assert c == pytest.approx(4.0) and not neg


def test_adr_first_step_bootstrap():
    adr = AdrState(np.array([[2.0]]), 1.0)
    u = adr_step(adr, np.array([[4.0]]), np.zeros((1, 1)), np.ones((1, 1), bool))
    assert adr.damping == 0.0
    assert adr.velocity_half[0, 0] == pytest.approx(1.0)
    assert u[0, 0] == pytest.approx(1.0)


def test_adr_one_dof_spring():
    k, f = 3.0, 2.0
    adr = AdrState(np.array([[0.25 * 2 * k * 1.05]]), 1.0)
    u = np.zeros((1, 1))
    free = np.ones((1, 1), bool)
    for it in range(2000):
        force = f - k * u
        if abs(force[0, 0]) <= 1e-12:
            break
        u = adr_step(adr, force, u, free)
    assert it < 2000
    assert abs(u[0, 0] - f / k) <= 1e-8
    assert 0 <= adr.damping < 2.0


def test_adr_stalled_dof_contributes_nothing():
    adr = AdrState(np.ones((2, 1)), 1.0)
    free = np.ones((2, 1), bool)
    u = adr_step(adr, np.array([[1.0], [0.0]]), np.zeros((2, 1)), free)
    adr_step(adr, np.array([[0.5], [0.3]]), u, free)
    assert adr.local_stiffness[1, 0] == 0.0
    assert np.all(np.isfinite(adr.local_stiffness))


@pytest.fixture(scope="module")
def small_plate():
    body = make_body(generate_plate_with_hole(1.0, 0.1, 32, 12), ALU)
    cons = edge_constraints(body.nodes, 1e-3, axis=0, profile="linear")
    return body, cons


def test_zero_load_converges_immediately(small_plate):
    body, _ = small_plate
    cons = Constraints(np.zeros((body.n_nodes, 2), bool))
    res = run_quasi_static(body, cons)
    assert res.iterations == 0 and res.converged
    assert np.all(res.state.displacement == 0)


def test_plate_symmetry_and_energy_decay(small_plate):
    body, cons = small_plate
    res = run_quasi_static(body, cons, kinetic_trace=True)
    assert res.converged
    u = res.state.displacement
    x = body.nodes.positions
    scale = np.abs(u).max()
    # mirror about the horizontal centreline
    mirror = np.array([np.argmin(np.linalg.norm(x - [p[0], -p[1]], axis=1)) for p in x])
    assert np.linalg.norm(x[mirror] - x * [1, -1], axis=1).max() < 1e-9
    assert np.abs(u[mirror, 0] - u[:, 0]).max() <= 1e-6 * scale
    assert np.abs(u[mirror, 1] + u[:, 1]).max() <= 1e-6 * scale
    # kinetic energy proxy: window maxima decrease after the transient
    ke = np.asarray(res.kinetic)
    windows = [ke[i:i + 50].max() for i in range(50, len(ke) - 50, 50)]
    assert all(b <= a for a, b in zip(windows, windows[1:]))


def test_adr_long_run_stable(small_plate):
    body, cons = small_plate
    res = run_quasi_static(body, cons, tol=0.0, max_iter=10000, raise_on_failure=False,
                           history_every=1000)
    assert res.iterations == 10000 and np.all(np.isfinite(res.state.displacement))
    assert res.residual < 1e-8


def test_not_converged_carries_history(small_plate):
    body, cons = small_plate
    with pytest.raises(NotConverged) as info:
        run_quasi_static(body, cons, max_iter=60, history_every=20)
    hist = info.value.history
    assert [h[0] for h in hist] == [0, 20, 40, 60, 60]
