"""Config-driven runs: build problems, simulate, evaluate checks, write artifacts, run suites."""

from __future__ import annotations

import json
import math
import os
import platform
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from . import diagnostics as dg
from .agents import AgentState, StepControl, random_initial_state, run
from .config import ExperimentConfig, config_from_dict, load_config, serialize_config, tomllib, with_seed
from .errors import ConfigError, PalignError
from .hydro1d import (
    HydroScheme,
    HydroState,
    bump_state,
    csv_state,
    run_hydro,
    sine_state,
    uniform_state,
)
from .kernels import Family, KernelSpec, load_table

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_SIM_ERROR = 2

SUITES = ("paper-props", "conservation", "decay-rates")


def default_output_root() -> Path:
    return Path(os.environ.get("PALIGN_OUT", "palign-out"))


def _resolve(path: str, base_dir: Path | None) -> Path:
    p = Path(path)
    return p if p.is_absolute() or base_dir is None else base_dir / p


# ---------------------------------------------------------------------------
# problem construction


def build_kernel(cfg: ExperimentConfig, base_dir: Path | None = None) -> KernelSpec:
    k = cfg.kernel
    dim = k.dim or (1 if cfg.kind == "hydro" else cfg.dynamics.dim)
    table_r = table_phi = None
    if k.family == "tabulated":
        table_r, table_phi = load_table(_resolve(k.table, base_dir))
    aniso = tuple(tuple(float(x) for x in row) for row in k.aniso) if k.aniso is not None else None
    return KernelSpec(
        family=Family(k.family),
        beta=k.beta,
        c_k=k.c_k,
        r_scale=k.r_scale,
        s=k.s,
        p=cfg.dynamics.p,
        dim=dim,
        phi_plus=k.phi_plus,
        aniso=aniso,
        eps_sing=k.eps_sing,
        table_r=table_r,
        table_phi=table_phi,
    )


def build_agent_problem(cfg: ExperimentConfig) -> tuple[AgentState, StepControl]:
    dyn, ini = cfg.dynamics, cfg.dynamics.initial
    if ini.generator == "explicit":
        state = AgentState(0.0, ini.positions, ini.velocities, dyn.p)
    else:
        state = random_initial_state(dyn.n_agents, dyn.dim, dyn.p, ini.seed, ini.box, ini.v0)
    ctl = StepControl(dt=dyn.dt, method=dyn.method, dt_min=dyn.dt_min, align_tol=dyn.align_tol,
                      merge_tol=dyn.merge_tol, collision_policy=dyn.collision_policy)
    return state, ctl


def build_hydro_problem(cfg: ExperimentConfig, base_dir: Path | None = None) -> tuple[HydroState, HydroScheme]:
    dyn, ini = cfg.dynamics, cfg.dynamics.initial
    n, L, p = dyn.n_cells, dyn.length, dyn.p
    if ini.generator == "uniform":
        state = uniform_state(n, L, ini.rho0, ini.amplitude, ini.e0, p)
    elif ini.generator == "sine":
        state = sine_state(n, L, ini.rho0, ini.amplitude, ini.e0, p, ini.mode)
    elif ini.generator == "bump":
        state = bump_state(n, L, ini.rho0, ini.height, ini.width, ini.amplitude, ini.e0, p)
    else:
        state = csv_state(_resolve(ini.path, base_dir), n, L, p)
    scheme = HydroScheme(cfl=dyn.cfl, rho_floor=dyn.rho_floor, pressure_mode=dyn.pressure_mode,
                         sink_mode=dyn.sink_mode)
    return state, scheme


def simulate(cfg: ExperimentConfig, base_dir: Path | None = None, snapshot=None) -> dg.DiagnosticsTrace:
    kernel = build_kernel(cfg, base_dir)
    if cfg.kind == "hydro":
        state, scheme = build_hydro_problem(cfg, base_dir)
        return run_hydro(state, kernel, scheme, cfg.dynamics.t_end, cfg.output.sample_every,
                         cfg.output.snapshot_every or None, snapshot)
    state, ctl = build_agent_problem(cfg)
    return run(state, kernel, ctl, cfg.dynamics.t_end, cfg.output.sample_every)


# ---------------------------------------------------------------------------
# checks


def trace_meta_from_config(cfg: ExperimentConfig, kernel: KernelSpec, trace: dg.DiagnosticsTrace) -> dict:
    dyn = cfg.dynamics
    meta = {
        "kind": cfg.kind,
        "p": dyn.p,
        "beta": kernel.beta,
        "s": kernel.s,
        "family": kernel.family.value,
        "mass": float(trace.M[0]),
        "dim": trace.dim,
    }
    if cfg.kind == "hydro":
        meta.update(n=dyn.n_cells, L=dyn.length, rho_floor=dyn.rho_floor, cfl=dyn.cfl)
    else:
        meta.update(n=dyn.n_agents, dt=dyn.dt)
    return meta


def _skip(name: str, note: str) -> dg.BoundRecord:
    return dg.BoundRecord(name, "not evaluated", 0.0, None, note=note)


def _needs_meta(name: str, trace: dg.DiagnosticsTrace, *keys: str) -> dg.BoundRecord | None:
    missing = [k for k in keys if k not in trace.meta]
    if missing:
        return dg.BoundRecord(name, "run metadata", math.nan, False,
                              note=f"missing run metadata: {', '.join(missing)}")
    return None


def evaluate_checks(trace: dg.DiagnosticsTrace, kernel: KernelSpec, cfg: ExperimentConfig) -> dg.BoundReport:
    ch = cfg.checks
    c = ch.riccati_c if ch.riccati_c is not None else dg.RICCATI_C
    p = float(trace.meta.get("p", cfg.dynamics.p))
    report = dg.BoundReport()
    for name in ch.enabled:
        if name == "conservation":
            report.add(dg.check_conservation(trace, ch.mass_tol, ch.momentum_tol, ch.energy_tol,
                                             ch.enstrophy_tol))
        elif name == "riccati":
            report.add(dg.check_riccati(trace, kernel, c))
            if p < 1:
                report.add(dg.check_alignment_balance_literal(trace, kernel, c))
        elif name == "theorem_envelope":
            report.add(dg.check_theorem_envelope(trace, kernel, p, ch.envelope_tol))
        elif name == "velocity_contraction":
            if p == 1:
                report.add(dg.check_velocity_contraction(trace, kernel, c))
            else:
                report.add(_skip("velocity-contraction", "defined for p = 1"))
        elif name == "max_deviation":
            if p >= 1:
                report.add(dg.check_max_deviation(trace, kernel, c))
            else:
                report.add(_skip("max-deviation", "defined for p >= 1"))
        elif name == "matrix_growth":
            report.add(dg.check_matrix_growth(trace, kernel))
        elif name == "monotone":
            report.add(dg.check_monotone(trace, "dE", ch.monotone_tol))
        elif name == "seminorm_budget":
            report.add(dg.check_seminorm_budget(trace, cfg.dynamics.rho_floor))
        elif name == "alignment_time":
            report.add(_check_alignment_time(trace, cfg))
        elif name == "aligned":
            report.add(_check_aligned(trace, ch.aligned_below))
        elif name == "closed_form":
            report.add(_check_closed_form(trace, kernel, cfg))
        elif name == "max_principle":
            report.add(_check_max_principle(trace, ch.max_principle_tol))
        elif name == "entropy_sign":
            report.add(_check_entropy(trace, ch.entropy_tol_factor))
        elif name == "clip_rate":
            report.add(_check_clip_rate(trace, ch.clip_fraction))
        elif name == "internal_energy_decay":
            report.add(_check_internal_energy(trace, ch.internal_energy_fraction))
        elif name == "fits":
            for fit in ch.fits:
                report.add(_check_fit(trace, fit))
    if trace.meta.get("status") == "error":
        report.add(dg.BoundRecord("run", "run completed", math.nan, False, note=trace.meta.get("error", "")))
    return report


def _check_alignment_time(trace, cfg) -> dg.BoundRecord:
    missing = _needs_meta("alignment-time", trace, "t_c")
    if missing:
        return missing
    t_c = float(trace.meta["t_c"])
    expected = cfg.checks.expected_t_c
    tol = cfg.checks.t_c_tol if cfg.checks.t_c_tol is not None else 2.0 * cfg.dynamics.dt
    if expected is None:
        return dg.BoundRecord("alignment-time", "finite-time alignment", t_c, None, t_c, tol,
                              note="no expected value configured")
    err = abs(t_c - expected)
    return dg.BoundRecord("alignment-time", "finite-time alignment", err, err <= tol, t_c, tol,
                          fitted=t_c, predicted=expected)


def _check_aligned(trace, below: float) -> dg.BoundRecord:
    final = float(trace.dE[-1])
    ok = final < below and "t_c" in trace.meta
    return dg.BoundRecord("aligned", "finite-time alignment reached", final, ok, float(trace.t[-1]), below,
                          note=f"t_c={trace.meta.get('t_c')}")


def _check_closed_form(trace, kernel: KernelSpec, cfg) -> dg.BoundRecord:
    name = "closed-form"
    if not (kernel.family is Family.HEAVY_TAIL and kernel.beta == 0 and cfg.dynamics.p == 1
            and trace.meta.get("kind") == "agents"):
        return dg.BoundRecord(name, "constant-kernel exponential solution", math.nan, False,
                              note="needs agents with p = 1 and a constant kernel")
    t = trace.t - trace.t[0]
    rate = kernel.c_k
    de = trace.dE[0] * np.exp(-2 * rate * t)
    dv = trace.dv[0] * np.exp(-rate * t)
    err = np.maximum(np.abs(trace.dE / de - 1), np.abs(trace.dv / dv - 1))
    k = int(np.argmax(err))
    tol = cfg.checks.closed_form_tol
    return dg.BoundRecord(name, "constant-kernel exponential solution", float(err[k]),
                          bool(err[k] <= tol), float(trace.t[k]), tol)


def _check_max_principle(trace, tol: float) -> dg.BoundRecord:
    missing = _needs_meta("max-principle", trace, "worst_umax_step_rise")
    if missing:
        return missing
    worst = float(trace.meta["worst_umax_step_rise"])
    worst = max(worst, float(trace.meta.get("worst_umin_step_drop", 0.0)))
    return dg.BoundRecord("max-principle", "velocity maximum principle, per step", worst, worst <= tol,
                          None, tol)


def _check_entropy(trace, factor: float) -> dg.BoundRecord:
    missing = _needs_meta("entropy-sign", trace, "entropy_residual_max", "entropy_sink_scale")
    if missing:
        return missing
    h = float(trace.meta["L"]) / float(trace.meta["n"])
    tol = factor * h * float(trace.meta["entropy_sink_scale"])
    worst = float(trace.meta["entropy_residual_max"])
    return dg.BoundRecord("entropy-sign", "entropy balance residual", worst, worst <= tol, None, tol)


def _check_clip_rate(trace, fraction: float) -> dg.BoundRecord:
    missing = _needs_meta("clip-rate", trace, "clip_count", "cell_steps")
    if missing:
        return missing
    rate = trace.meta["clip_count"] / max(1, trace.meta["cell_steps"])
    return dg.BoundRecord("clip-rate", "internal-energy clipping frequency", float(rate), rate < fraction,
                          None, fraction)


def _check_internal_energy(trace, fraction: float) -> dg.BoundRecord:
    missing = _needs_meta("internal-energy-decay", trace, "internal_energy_initial", "internal_energy_final")
    if missing:
        return missing
    e0 = trace.meta["internal_energy_initial"]
    ratio = trace.meta["internal_energy_final"] / e0 if e0 > 0 else 0.0
    return dg.BoundRecord("internal-energy-decay", "internal energy decay", float(ratio), ratio < fraction,
                          float(trace.t[-1]), fraction)


def _check_fit(trace, fit) -> dg.BoundRecord:
    column = fit.column
    name = f"fit-{fit.model}-{column or 'default'}"
    try:
        res = dg.fit_decay_exponent(trace, fit.model, column, fit.discard)
    except PalignError as exc:
        return dg.BoundRecord(name, "decay-rate fit", math.nan, False, note=str(exc))
    margins = []
    if fit.max_exponent is not None:
        margins.append(res.exponent - fit.max_exponent)
    if fit.min_exponent is not None:
        margins.append(fit.min_exponent - res.exponent)
    margin = max(margins) if margins else math.nan
    ok = bool(margins) and margin <= 0
    passed = ok if margins else None
    return dg.BoundRecord(name, "decay-rate fit", float(margin), passed, None, None,
                          fitted=res.exponent, predicted=fit.predicted,
                          note=f"amplitude={res.amplitude:.6g}, residual={res.residual:.3g}")


# ---------------------------------------------------------------------------
# running and artifacts


@dataclass
class RunResult:
    exit_status: int
    trace: dg.DiagnosticsTrace | None
    report: dg.BoundReport
    out_dir: Path
    manifest: dict


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, default=_json_default, allow_nan=False) + "\n")


def _clean(meta: dict) -> dict:
    return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in meta.items()}


def _versions() -> dict:
    import pydantic

    return {"palign": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "pydantic": pydantic.VERSION}


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path, base_dir: Path | None = None,
                   trace_path: str | Path | None = None, threads: int = 1) -> RunResult:
    """Simulate (or analyze an existing trace), check, and write artifacts into ``out_dir``.

    Writes trace.csv + trace.meta.json (simulation modes), report.json,
    config.toml and manifest.json. Exit status 0 iff every enabled check passes.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.toml").write_text(serialize_config(cfg))
    kernel = build_kernel(cfg, base_dir)
    start = time.perf_counter()
    error = None
    snapshot = None
    if cfg.mode == "analyze":
        src = trace_path or (cfg.trace and _resolve(cfg.trace, base_dir))
        if src is None:
            raise ConfigError("analyze mode needs a trace file")
        src = Path(src)
        trace = dg.DiagnosticsTrace.from_csv(src)
        trace.meta = trace_meta_from_config(cfg, kernel, trace)
        sidecar = src.with_suffix(".meta.json")
        if sidecar.exists():
            trace.meta.update(json.loads(sidecar.read_text()))
    else:
        if cfg.kind == "hydro" and cfg.output.snapshot_every:
            snap_dir = out / "snapshots"
            snap_dir.mkdir(exist_ok=True)

            def snapshot(state):
                idx = len(list(snap_dir.glob("snap_*.csv")))
                data = np.column_stack([state.x, state.rho, state.u, state.ien / state.rho])
                np.savetxt(snap_dir / f"snap_{idx:05d}.csv", data, fmt="%.17g", delimiter=",",
                           header=f"x,rho,u,e  t={state.t:.17g}", comments="")

        trace = simulate(cfg, base_dir, snapshot)
        trace.to_csv(out / "trace.csv")
        _write_json(out / "trace.meta.json", _clean(trace.meta))
        error = trace.meta.get("error")
    wall = time.perf_counter() - start
    report = evaluate_checks(trace, kernel, cfg)
    report.write(out / "report.json")
    if error:
        status = EXIT_SIM_ERROR
    else:
        status = EXIT_OK if report.passed else EXIT_CHECK_FAILED
    manifest = {
        "name": cfg.name,
        "mode": cfg.mode,
        "seed": cfg.dynamics.initial.seed,
        "threads": threads,
        "wall_time_s": wall,
        "versions": _versions(),
        "status": trace.meta.get("status", "analyzed"),
        "error": error,
        "exit_status": status,
        "failed_checks": [r.name for r in report.records if r.passed is False],
    }
    _write_json(out / "manifest.json", manifest)
    return RunResult(status, trace, report, out, manifest)


# ---------------------------------------------------------------------------
# suites


def _suite_dir():
    return resources.files("palign") / "suites"


def load_suite(name: str) -> dict:
    """The bundle: ``members`` (config file names) and an optional ``checks`` override."""
    if name not in SUITES:
        raise ConfigError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}")
    return tomllib.loads((_suite_dir() / f"{name}.toml").read_text())


def suite_members(name: str) -> list[str]:
    return list(load_suite(name)["members"])


def load_suite_config(member: str) -> ExperimentConfig:
    return load_config(_suite_dir() / "configs" / member)


def run_suite(name: str, out_root: str | Path, threads: int = 1, seed: int | None = None,
              echo=None) -> tuple[int, list[dict]]:
    """Run every member of a suite sequentially; returns (exit status, summary rows)."""
    bundle = load_suite(name)
    root = Path(out_root) / name
    root.mkdir(parents=True, exist_ok=True)
    rows = []
    worst = EXIT_OK
    for member in bundle["members"]:
        cfg = load_suite_config(member)
        if "checks" in bundle:
            data = cfg.model_dump(mode="json", exclude_none=True)
            data["checks"]["enabled"] = list(bundle["checks"])
            cfg = config_from_dict(data)
        if seed is not None and cfg.mode == "agents" and cfg.dynamics.initial.generator == "random":
            cfg = with_seed(cfg, seed)
        res = run_experiment(cfg, root / cfg.name, threads=threads)
        failed = res.manifest["failed_checks"]
        row = {"member": cfg.name, "exit_status": res.exit_status, "checks": len(res.report.records),
               "failed": failed, "wall_time_s": round(res.manifest["wall_time_s"], 3),
               "error": res.manifest["error"]}
        rows.append(row)
        worst = max(worst, res.exit_status)
        if echo:
            echo(_summary_line(row))
    lines = [f"suite {name}: {'PASS' if worst == EXIT_OK else 'FAIL'}"] + [_summary_line(r) for r in rows]
    (root / "summary.txt").write_text("\n".join(lines) + "\n")
    _write_json(root / "summary.json", {"suite": name, "exit_status": worst, "members": rows})
    return worst, rows


def _summary_line(row: dict) -> str:
    verdict = "PASS" if row["exit_status"] == EXIT_OK else "FAIL"
    detail = f"failed={','.join(row['failed'])}" if row["failed"] else f"{row['checks']} checks"
    if row["error"]:
        detail += f" error={row['error']}"
    return f"{verdict:4s} {row['member']:<32s} {row['wall_time_s']:8.2f}s  {detail}"
