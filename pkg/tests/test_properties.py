import numpy as np
from hypothesis import assume, given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from palign import diagnostics as dg
from palign.agents import AgentState, StepControl, p_alignment_rhs, run
from palign.config import parse_config, serialize_config
from palign.hydro1d import HydroScheme, HydroState, alignment_source, internal_energy_sink, run_hydro
from palign.kernels import Family, KernelSpec, decreasing_envelope, evaluate

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
betas = st.floats(0, 2)
exps = st.sampled_from([0.75, 1.0, 1.25, 1.5, 2.0])


def points(dim):
    return st.lists(finite, min_size=dim, max_size=dim)


@st.composite
def agent_states(draw, n_min=2, n_max=8, p=None):
    n = draw(st.integers(n_min, n_max))
    dim = draw(st.integers(1, 3))
    x = draw(arrays(float, (n, dim), elements=finite))
    v = draw(arrays(float, (n, dim), elements=st.floats(-2, 2)))
    pp = draw(exps) if p is None else p
    return AgentState(0.0, x, v, pp)


@given(points(2), points(2), betas)
def test_kernel_symmetry(x, y, beta):
    k = KernelSpec(beta=beta, dim=2)
    assert evaluate(k, x, y) == evaluate(k, y, x)


@given(st.floats(0.05, 0.95), st.floats(0, 1), st.floats(1e-3, 20), st.floats(1e-3, 20))
def test_singular_symmetric_and_positive(s, beta, r1, r2):
    k = KernelSpec(Family.SINGULAR_HEAVY_TAIL, beta=beta, s=s, dim=1)
    assert evaluate(k, [0.0], [r1]) == evaluate(k, [r1], [0.0]) > 0


@given(betas, st.floats(0, 50), st.floats(0, 50))
def test_envelope_monotone(beta, r1, r2):
    lo, hi = sorted((r1, r2))
    for k in (KernelSpec(beta=beta), KernelSpec(Family.SINGULAR_HEAVY_TAIL, beta=beta, s=0.5, eps_sing=1e-3)):
        assert decreasing_envelope(k, lo) >= decreasing_envelope(k, hi)


@given(st.lists(st.floats(0.01, 2), min_size=2, max_size=8), st.floats(0, 10), st.floats(0, 10))
def test_tabulated_envelope_monotone(phi, r1, r2):
    k = KernelSpec(Family.TABULATED, table_r=tuple(float(i) for i in range(len(phi))), table_phi=tuple(phi))
    lo, hi = sorted((r1, r2))
    assert decreasing_envelope(k, lo) >= decreasing_envelope(k, hi)


@given(betas, st.floats(0, 100))
def test_tail_lower_bound(beta, r):
    k = KernelSpec(beta=beta, c_k=1.3)
    assert float(k.profile(r)) >= 1.3 * (1 + r) ** -beta * (1 - 1e-15)


@given(agent_states())
def test_energy_fluctuation_forms(state):
    v = state.velocities
    var = np.sum((v - v.mean(0)) ** 2) / state.n
    assert abs(dg.energy_fluctuations_agents(state) - var) <= 1e-12 * max(var, 1e-300) + 1e-14


@given(agent_states(), points(3))
def test_fluctuation_invariance(state, w):
    w = np.asarray(w[: state.dim])
    shifted = AgentState(0.0, state.positions + w, state.velocities, state.p)
    assert np.isclose(dg.diameter(shifted.positions), dg.diameter(state.positions), rtol=1e-12, atol=1e-12)
    moved = AgentState(0.0, state.positions, state.velocities + w, state.p)
    assert np.isclose(dg.energy_fluctuations_agents(moved, check=False),
                      dg.energy_fluctuations_agents(state, check=False), rtol=1e-10, atol=1e-10)


@given(agent_states(), st.floats(0, 2 * np.pi))
def test_rotation_invariance(state, theta):
    assume(state.dim == 2)
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    r = AgentState(0.0, state.positions @ rot.T, state.velocities @ rot.T, state.p)
    assert np.isclose(dg.energy_fluctuations_agents(r), dg.energy_fluctuations_agents(state), rtol=1e-10, atol=1e-12)
    assert np.isclose(dg.diameter(r.positions), dg.diameter(state.positions), rtol=1e-10, atol=1e-10)


@given(agent_states(), betas)
def test_rhs_sums_to_zero(state, beta):
    acc = p_alignment_rhs(state, KernelSpec(beta=beta, p=state.p, dim=state.dim))
    scale = np.abs(acc).sum() + 1e-300
    assert np.all(np.abs(acc.sum(axis=0)) <= 1e-12 * scale)


@given(agent_states(n_max=6), betas)
def test_momentum_and_monotone_fluctuations(state, beta):
    assume(dg.velocity_diameter(state.velocities) > 1e-3)
    k = KernelSpec(beta=beta, p=state.p, dim=state.dim)
    tr = run(state, k, StepControl(dt=0.01), 0.3)
    assume(tr.meta["status"] != "error")
    e0 = max(tr.E[0], 1e-300)
    drift = np.abs(tr.mom - tr.mom[0]).max() / np.sqrt(2 * e0)
    assert drift < 1e-10
    assert np.all(np.diff(tr.dE) <= 1e-12 * tr.dE[0])


@given(agent_states(n_max=6, p=1.0), points(3))
def test_galilean_shift(state, w):
    assume(dg.velocity_diameter(state.velocities) > 1e-3)
    w = np.asarray(w[: state.dim]) * 0.1
    k = KernelSpec(beta=0.5, dim=state.dim)
    a = run(state, k, StepControl(dt=0.01), 0.2)
    b = run(AgentState(0.0, state.positions, state.velocities + w, 1.0), k, StepControl(dt=0.01), 0.2)
    # relative motion is unchanged; only round-off in the shifted sums differs
    np.testing.assert_allclose(b.final_state.velocities, a.final_state.velocities + w, atol=1e-11)
    np.testing.assert_allclose(b.dE, a.dE, rtol=1e-9, atol=1e-12)


@given(st.integers(4, 24), st.floats(0, 1), st.integers(0, 2 ** 32 - 1))
def test_hydro_source_antisymmetric(n, beta, seed):
    rng = np.random.default_rng(seed)
    rho = rng.uniform(0.5, 2, n)
    s = HydroState(0.0, 1.0, rho, rho * rng.normal(size=n), rho * rng.uniform(0, 0.1, n))
    src = alignment_source(s, KernelSpec(beta=beta))
    assert abs(src.sum()) <= 1e-12 * np.abs(src).sum() + 1e-300
    sink = internal_energy_sink(s, KernelSpec(beta=beta), HydroScheme(pressure_mode="EntropicEquality"))
    assert np.all(sink <= 0)


@given(st.integers(8, 32), st.floats(0, 1), st.integers(0, 2 ** 32 - 1))
def test_hydro_conservation(n, beta, seed):
    rng = np.random.default_rng(seed)
    x = (np.arange(n) + 0.5) / n
    rho = 1 + 0.2 * np.sin(2 * np.pi * (x + rng.uniform()))
    u = 0.1 * rng.normal() * np.cos(2 * np.pi * x)
    s = HydroState(0.0, 1.0, rho, rho * u, rho * 0.01)
    tr = run_hydro(s, KernelSpec(beta=beta), HydroScheme(pressure_mode="EntropicEquality"), 0.1)
    assert np.all(np.abs(tr.M - tr.M[0]) <= 1e-12 * tr.M[0])
    assert np.all(np.abs(tr.mom - tr.mom[0]) <= 1e-12 * np.sqrt(2 * tr.E[0] * tr.M[0]))
    assert tr.meta["worst_energy_step_rise"] <= 1e-9 * tr.E[0]


@given(st.floats(-3, -0.1), st.floats(0.1, 10))
def test_power_fit_recovers_exponent(alpha, amp):
    t = np.linspace(1, 50, 200)
    res = dg.fit_series(t, amp * t ** alpha, "ParetoPower", discard=0.0)
    assert abs(res.exponent - alpha) <= 1e-6


@given(st.floats(0.2, 1.5), st.integers(0, 2 ** 32 - 1))
def test_frac_exp_fit_under_noise(alpha, seed):
    rng = np.random.default_rng(seed)
    t = np.linspace(0, 4, 400)
    y = np.exp(-t ** alpha)
    noisy = y * (1 + 0.01 * rng.standard_normal(t.size))
    assume(np.all(noisy[1:] < 1))
    assert abs(dg.fit_series(t, y, "FracExp", y0=1.0, discard=0.2).exponent - alpha) <= 1e-6
    assert abs(dg.fit_series(t, noisy, "FracExp", y0=1.0, discard=0.2).exponent - alpha) <= 0.02


@given(st.floats(-3, -0.1), st.integers(0, 2 ** 32 - 1))
def test_power_fit_under_noise(alpha, seed):
    rng = np.random.default_rng(seed)
    t = np.linspace(1, 100, 400)
    y = t ** alpha * (1 + 0.01 * rng.standard_normal(t.size))
    assert abs(dg.fit_series(t, y, "ParetoPower").exponent - alpha) <= 0.02


@given(st.floats(0, 2), st.sampled_from([1.0, 1.5, 2.0]), st.integers(2, 50), st.integers(0, 10 ** 6))
def test_config_round_trip(beta, p, n, seed):
    text = f"""
mode = "agents"
[kernel]
beta = {beta!r}
[dynamics]
p = {p!r}
n_agents = {n}
[dynamics.initial]
seed = {seed}
[checks]
enabled = ["conservation", "riccati"]
"""
    cfg = parse_config(text)
    assert parse_config(serialize_config(cfg)) == cfg
