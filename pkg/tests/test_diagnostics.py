import math

import numpy as np
import pytest

from palign import diagnostics as dg
from palign.agents import AgentState, StepControl, run
from palign.errors import FitDomainError, InvalidInputError, ParameterRangeError
from palign.hydro1d import HydroState, sine_state
from palign.kernels import KernelSpec

CONST = KernelSpec(beta=0.0)


def two_agent_trace(t_end=5.0, p=1.0):
    s = AgentState(0.0, [[0.0], [1.0]], [[1.0], [-1.0]], p)
    return run(s, CONST, StepControl(dt=0.01), t_end)


def synthetic(t, de, p=1.0, kind="agents", **cols):
    tr = dg.DiagnosticsTrace.empty({"kind": kind, "p": p, "mass": 1.0})
    for k, tk in enumerate(t):
        row = {"t": tk, "dE": de[k], "dv": cols.get("dv", de)[k], "D": 1.0, "M": 1.0, "mom_x": 0.0,
               "E": cols.get("E", de)[k], "ens": cols.get("ens", np.zeros_like(t))[k],
               "seminorm": cols.get("seminorm", np.zeros_like(t))[k], "umax": cols.get("umax", de)[k]}
        tr.add(row)
    return tr


def test_energy_fluctuations_agents():
    assert dg.energy_fluctuations_agents(AgentState(0, [[0, 0], [1, 1]], [[2, 1], [2, 1]], 1)) == 0.0
    s = AgentState(0, [[0, 0], [1, 0]], [[1, 0], [-1, 0]], 1)
    assert dg.energy_fluctuations_agents(s) == 1.0  # (1/8) (4 + 4)


def test_energy_fluctuation_forms_agree():
    rng = np.random.default_rng(0)
    v = rng.normal(size=(40, 3))
    s = AgentState(0, rng.normal(size=(40, 3)), v, 1)
    var = np.sum((v - v.mean(0)) ** 2) / 40
    assert dg.energy_fluctuations_agents(s) == pytest.approx(var, rel=1e-12)


def test_energy_fluctuations_hydro():
    assert dg.energy_fluctuations_hydro(HydroState(0, 2.0, [1, 1], [0.5, 0.5], [0, 0])) == 0.0
    assert dg.energy_fluctuations_hydro(HydroState(0, 2.0, [1, 1], [1, -1], [0, 0])) == 1.0
    s = HydroState(0, 1.0, np.ones(4), np.full(4, 0.2), np.full(4, 0.3))
    assert dg.energy_fluctuations_hydro(s) == pytest.approx(0.3)


def test_diameter():
    assert dg.diameter(np.zeros((3, 2))) == 0.0
    assert dg.diameter([[0.0, 0.0], [3.0, 4.0]]) == 5.0
    assert dg.diameter(torus_length=3.0) == 1.5


def test_fractional_seminorm():
    s = HydroState(0, 2.0, [1, 1], [0, 1], [0, 0])
    assert dg.fractional_seminorm(s, 0.5, 1.0) == pytest.approx(2.0)
    assert dg.fractional_seminorm(HydroState(0, 2.0, [1, 1], [1, 1], [0, 0]), 0.5, 1.0) == 0.0
    w = sine_state(32, amplitude=0.1, p=1.5)
    w2 = sine_state(32, amplitude=0.2, p=1.5)
    assert dg.fractional_seminorm(w2, 0.6, 1.5) == pytest.approx(2 ** 3 * dg.fractional_seminorm(w, 0.6, 1.5))
    with pytest.raises(ParameterRangeError):
        dg.fractional_seminorm(w, 1.2, 1.0)


def test_holder_quotient():
    assert dg.holder_quotient(sine_state(16, amplitude=0.0), 0.75, 1.0) == 0.0
    with pytest.raises(ParameterRangeError):
        dg.holder_quotient(sine_state(16), 0.4, 1.0)


def test_holder_quotient_refinement_stable():
    ratios = []
    for n in (64, 128, 256):
        s = sine_state(n, amplitude=0.1)
        ratios.append(dg.holder_quotient(s, 0.75, 1.0) / dg.fractional_seminorm(s, 0.75, 1.0) ** 0.5)
    assert max(ratios) / min(ratios) < 2.0


def test_riccati_two_agent_margin():
    tr = two_agent_trace()
    rec = dg.check_riccati(tr, CONST)
    assert rec.passed and rec.margin < 0


def test_riccati_aligned_trace():
    t = np.linspace(0, 1, 11)
    rec = dg.check_riccati(synthetic(t, np.zeros_like(t)), CONST)
    assert rec.passed and rec.margin == 0.0


def test_riccati_detects_growth():
    t = np.linspace(0, 1, 11)
    rec = dg.check_riccati(synthetic(t, 1.0 + t), CONST)
    assert rec.passed is False and rec.margin > 0


def test_theorem_envelope_two_agent():
    assert dg.check_theorem_envelope(two_agent_trace(), CONST, 1.0).passed


def test_theorem_envelope_p2_formula():
    t = np.linspace(0, 2, 21)
    tr = synthetic(t, np.full_like(t, 0.1), p=2.0)
    env = dg.theorem_envelope(tr, CONST, 2.0)
    np.testing.assert_allclose(env[1:], 1 / (4 * t[1:]), rtol=1e-12)


def test_theorem_envelope_zero_data():
    t = np.linspace(0, 1, 5)
    assert dg.check_theorem_envelope(synthetic(t, np.zeros_like(t)), CONST, 1.0).passed


def test_conservation_checks():
    recs = dg.check_conservation(two_agent_trace())
    assert all(r.passed for r in recs)


def test_conservation_detects_momentum_drift():
    tr = two_agent_trace(1.0)
    mom = tr.mom[:, 0].copy()
    mom[-1] += 1e-6
    bad = tr.with_column("mom_x", mom)
    rec = {r.name: r for r in dg.check_conservation(bad)}
    assert rec["momentum"].passed is False


def test_enstrophy_boundary_case():
    t = np.linspace(0, 1, 5)
    e = np.full_like(t, 0.5)
    tr = synthetic(t, e, E=e, ens=np.full_like(t, 1.0))
    rec = {r.name: r for r in dg.check_conservation(tr)}
    assert rec["enstrophy"].passed


def test_fit_power_law():
    t = np.linspace(1, 100, 400)
    res = dg.fit_series(t, t ** -2.0, "ParetoPower", discard=0.0)
    assert res.exponent == pytest.approx(-2.0, abs=1e-6)


def test_fit_frac_exp():
    t = np.linspace(0, 10, 400)
    res = dg.fit_series(t, np.exp(-t ** 0.75), "FracExp", y0=1.0, discard=0.1)
    assert res.exponent == pytest.approx(0.75, abs=1e-6)


def test_fit_domain_errors():
    t = np.linspace(0, 1, 20)
    with pytest.raises(FitDomainError):
        dg.fit_series(t, -np.ones(20), "ParetoPower")
    with pytest.raises(FitDomainError):
        dg.fit_series(t[:5], np.ones(5), "ParetoPower", discard=0.0)


def test_scaled_mass_formula():
    assert dg.scaled_mass(1.0, 2.0, 2.0, 0.5, 1.0) == pytest.approx(2 * 2 * 2 ** -0.5)
    assert dg.scaled_mass(2.0, 1.0, 1.0, 0.0, 2.0) == pytest.approx(4.0 ** -1)


def test_trace_csv_round_trip(tmp_path):
    tr = two_agent_trace(0.5)
    tr.to_csv(tmp_path / "t.csv")
    back = dg.DiagnosticsTrace.from_csv(tmp_path / "t.csv")
    assert np.array_equal(back.data, tr.data)


def test_trace_rejects_non_monotone_time():
    tr = dg.DiagnosticsTrace.empty({})
    row = {c: 0.0 for c in dg.trace_columns(1)}
    tr.add(row)
    with pytest.raises(InvalidInputError):
        tr.add(row)


def test_report_json(tmp_path):
    rep = dg.BoundReport()
    rep.add(dg.BoundRecord("x", "anchor", -1.0, True))
    rep.add(dg.BoundRecord("y", "anchor", math.nan, None))
    assert rep.passed
    rep.write(tmp_path / "r.json")
    text = (tmp_path / "r.json").read_text()
    assert '"pass": true' in text and "NaN" not in text
