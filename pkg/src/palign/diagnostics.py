"""Fluctuation and conservation functionals, inequality monitors and decay-rate fits."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, NamedTuple

import numpy as np

from .errors import FitDomainError, InvalidInputError, ParameterRangeError
from .kernels import KernelSpec, decreasing_envelope
from .parallel import map_rows, ordered_sum

# Riccati-type monitors allow  c * (sample spacing)^2 + 1e-10  for the centered
# difference error. Calibrated once on the reference runs and frozen.
RICCATI_C = 1.0
RICCATI_ABS = 1e-10


# ---------------------------------------------------------------------------
# traces


def trace_columns(dim: int) -> list[str]:
    mom = ["mom_x", "mom_y", "mom_z"][:dim]
    return ["t", "dE", "dv", "D", "M", *mom, "E", "ens", "seminorm", "umax"]


@dataclass(eq=False)
class DiagnosticsTrace:
    """Sampled time series of one run.

    ``ens`` is the cumulative enstrophy (time integral of the dissipation rate,
    so that ``E + ens / 2`` stays at ``E(0)`` up to scheme error). ``umax`` is
    the largest deviation of a velocity from the mean velocity. For agent runs
    ``seminorm`` holds (1/N^2) sum_{i != j} |v_i - v_j|^(2p); for hydro runs
    with singular kernels it holds the discrete W^{s,2p} seminorm (2p-th
    power), and 0 otherwise.
    """

    columns: list[str]
    rows: list[list[float]] = field(default_factory=list)
    meta: dict[str, Any] = field(default_factory=dict)
    final_state: Any = None

    @classmethod
    def empty(cls, meta: dict[str, Any]) -> "DiagnosticsTrace":
        return cls(columns=trace_columns(int(meta.get("dim", 1))), meta=dict(meta))

    def add(self, sample: dict[str, float]) -> None:
        row = [float(sample[c]) for c in self.columns]
        if self.rows and not row[0] > self.rows[-1][0]:
            raise InvalidInputError("trace times must be strictly increasing")
        self.rows.append(row)

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def data(self) -> np.ndarray:
        return np.asarray(self.rows, dtype=float).reshape(len(self.rows), len(self.columns))

    def col(self, name: str) -> np.ndarray:
        return self.data[:, self.columns.index(name)]

    @property
    def dim(self) -> int:
        return sum(c.startswith("mom_") for c in self.columns)

    @property
    def t(self) -> np.ndarray:
        return self.col("t")

    @property
    def dE(self) -> np.ndarray:
        return self.col("dE")

    @property
    def dv(self) -> np.ndarray:
        return self.col("dv")

    @property
    def D(self) -> np.ndarray:
        return self.col("D")

    @property
    def M(self) -> np.ndarray:
        return self.col("M")

    @property
    def E(self) -> np.ndarray:
        return self.col("E")

    @property
    def ens(self) -> np.ndarray:
        return self.col("ens")

    @property
    def seminorm(self) -> np.ndarray:
        return self.col("seminorm")

    @property
    def umax(self) -> np.ndarray:
        return self.col("umax")

    @property
    def mom(self) -> np.ndarray:
        d = self.data
        idx = [i for i, c in enumerate(self.columns) if c.startswith("mom_")]
        return d[:, idx]

    def with_column(self, name: str, values) -> "DiagnosticsTrace":
        """Copy with one column replaced (used to build corrupted traces in tests)."""
        d = self.data.copy()
        d[:, self.columns.index(name)] = values
        return DiagnosticsTrace(list(self.columns), d.tolist(), dict(self.meta))

    def to_csv(self, path: str | Path) -> None:
        np.savetxt(path, self.data, fmt="%.17g", delimiter=",", header=",".join(self.columns),
                   comments="")

    @classmethod
    def from_csv(cls, path: str | Path, meta: dict[str, Any] | None = None) -> "DiagnosticsTrace":
        path = Path(path)
        with path.open() as fh:
            header = fh.readline().strip().split(",")
        expected = trace_columns(sum(c.startswith("mom_") for c in header))
        if header != expected:
            raise InvalidInputError(f"{path}: unexpected trace header {header}")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if not np.all(np.isfinite(data)):
            raise InvalidInputError(f"{path}: non-finite trace entries")
        if data.shape[0] > 1 and np.any(np.diff(data[:, 0]) <= 0):
            raise InvalidInputError(f"{path}: times are not strictly increasing")
        return cls(header, data.tolist(), dict(meta or {}))


# ---------------------------------------------------------------------------
# agent functionals


def _pair_sq_block(v, lo, hi):
    """|v_j - v_i|^2 with shape (N, hi - lo), inner index first."""
    dv = v[:, None, :] - v[None, lo:hi, :]
    g2 = dv[..., 0] * dv[..., 0]
    for k in range(1, v.shape[1]):
        g2 = g2 + dv[..., k] * dv[..., k]
    return g2


def _as_2d(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return a[:, None] if a.ndim == 1 else a


def _max_pair_distance(a) -> float:
    a = _as_2d(a)
    rows = map_rows(lambda lo, hi: np.max(_pair_sq_block(a, lo, hi), axis=0), a.shape[0])
    return float(np.sqrt(np.max(rows)))


def energy_fluctuations_agents(state, check: bool = True) -> float:
    """(1/2N^2) sum_ij |v_i - v_j|^2, cross-checked against (1/N) sum_i |v_i - mean|^2."""
    v = _as_2d(state.velocities)
    n = v.shape[0]
    rows = map_rows(lambda lo, hi: ordered_sum(_pair_sq_block(v, lo, hi)), n)
    double = float(ordered_sum(rows)) / (2.0 * n * n)
    if check:
        variance = float(np.sum((v - v.mean(axis=0)) ** 2)) / n
        scale = float(np.sum(v * v)) / n
        if abs(double - variance) > 1e-12 * max(double, variance) + 64 * np.finfo(float).eps * scale:
            raise InvalidInputError(f"energy-fluctuation forms disagree: {double!r} vs {variance!r}")
    return double


def kinetic_energy_agents(v) -> float:
    v = _as_2d(v)
    return 0.5 * float(np.sum(v * v)) / v.shape[0]


def velocity_diameter(v) -> float:
    """max_ij |v_i - v_j|."""
    return _max_pair_distance(v)


def max_deviation(v) -> float:
    """max_i |v_i - mean(v)|."""
    v = _as_2d(v)
    d = v - v.mean(axis=0)
    return float(np.sqrt(np.max(np.sum(d * d, axis=1))))


def diameter(positions=None, *, torus_length: float | None = None) -> float:
    """Largest pairwise distance; on a torus of length L this is L/2 by convention."""
    if torus_length is not None:
        return 0.5 * torus_length
    return _max_pair_distance(positions)


def support_width(rho, h: float, rho_floor: float) -> float:
    """Width of {rho > rho_floor} on a grid of spacing h (compact-support mode)."""
    idx = np.flatnonzero(np.asarray(rho) > rho_floor)
    if idx.size == 0:
        return 0.0
    return float((idx[-1] - idx[0] + 1) * h)


def pair_power_mean(v, p: float, merge_tol: float = 0.0) -> float:
    """(1/N^2) sum_{i != j} |v_i - v_j|^(2p), skipping pairs closer than ``merge_tol`` when p < 1."""
    v = _as_2d(v)
    n = v.shape[0]

    def block(lo, hi):
        g2 = _pair_sq_block(v, lo, hi)
        vals = g2 ** p
        if p < 1:
            vals[g2 <= merge_tol * merge_tol] = 0.0
        vals[np.arange(lo, hi), np.arange(hi - lo)] = 0.0
        return ordered_sum(vals)

    return float(ordered_sum(map_rows(block, n))) / (n * n)


def agent_meta(state, kernel: KernelSpec, ctl) -> dict[str, Any]:
    return {
        "kind": "agents",
        "p": state.p,
        "beta": kernel.beta,
        "s": kernel.s,
        "family": kernel.family.value,
        "mass": 1.0,
        "n": state.n,
        "dim": state.dim,
        "dt": ctl.dt,
        "method": ctl.method.value,
    }


def agent_sample(state, ens: float, merge_tol: float = 0.0) -> dict[str, float]:
    v = state.velocities
    out = {
        "t": state.t,
        "dE": energy_fluctuations_agents(state),
        "dv": velocity_diameter(v),
        "D": diameter(state.positions),
        "M": 1.0,
        "E": kinetic_energy_agents(v),
        "ens": ens,
        "seminorm": pair_power_mean(v, state.p, merge_tol),
        "umax": max_deviation(v),
    }
    mean = v.mean(axis=0)
    for name, val in zip(("mom_x", "mom_y", "mom_z"), mean):
        out[name] = float(val)
    return out


# ---------------------------------------------------------------------------
# hydro functionals


def periodic_distances(n: int, length: float) -> np.ndarray:
    """n x n matrix of periodic distances between cell centers."""
    h = length / n
    k = np.arange(n)
    sep = np.abs(k[None, :] - k[:, None]) * h
    return np.minimum(sep, length - sep)


def energy_fluctuations_hydro(state) -> float:
    """Quadrature of int (|u - mean u|^2 / 2 + e) rho dx."""
    rho, mom, ien, h = state.rho, state.mom, state.ien, state.h
    mass = float(np.sum(rho)) * h
    ubar = float(np.sum(mom)) * h / mass
    u = mom / rho
    return float(np.sum(0.5 * rho * (u - ubar) ** 2 + ien)) * h


def total_energy_hydro(state) -> float:
    return float(np.sum(0.5 * state.mom ** 2 / state.rho + state.ien)) * state.h


def fractional_seminorm(state, s: float, p: float, eps: float | None = None) -> float:
    """Discrete sum_{i != j} |u_j - u_i|^(2p) / max(r_ij, eps)^(1 + 2sp) h^2 on the torus."""
    if not 0 < s < 1:
        raise ParameterRangeError(f"s must lie in (0, 1), got {s}")
    if p < 1:
        raise ParameterRangeError(f"p must be >= 1, got {p}")
    u = np.asarray(state.mom) / np.asarray(state.rho)
    n, h = u.size, state.h
    eps = h if eps is None else eps
    order = 1.0 + 2.0 * s * p
    dist = periodic_distances(n, state.L)

    def block(lo, hi):
        du = np.abs(u[:, None] - u[None, lo:hi]) ** (2 * p)
        r = np.maximum(dist[:, lo:hi], eps)
        vals = du / r ** order
        vals[np.arange(lo, hi), np.arange(hi - lo)] = 0.0
        return ordered_sum(vals)

    return float(ordered_sum(map_rows(block, n))) * h * h


def holder_quotient(state, s: float, p: float) -> float:
    """max_{i != j} |u_i - u_j| / r_ij^(s - 1/(2p)) on the torus."""
    theta = 1.0 / (2.0 * p)
    if s <= theta:
        raise ParameterRangeError(f"need s > 1/(2p) = {theta}, got s = {s}")
    u = np.asarray(state.mom) / np.asarray(state.rho)
    dist = periodic_distances(u.size, state.L)
    off = ~np.eye(u.size, dtype=bool)
    q = np.abs(u[None, :] - u[:, None])[off] / dist[off] ** (s - theta)
    return float(np.max(q))


def hydro_meta(state, kernel: KernelSpec, scheme) -> dict[str, Any]:
    return {
        "kind": "hydro",
        "p": state.p_exp,
        "beta": kernel.beta,
        "s": kernel.s,
        "family": kernel.family.value,
        "mass": float(np.sum(state.rho)) * state.h,
        "n": state.n,
        "L": state.L,
        "dim": 1,
        "cfl": scheme.cfl,
        "rho_floor": scheme.rho_floor,
        "pressure_mode": scheme.pressure_mode.value,
    }


def hydro_sample(state, kernel: KernelSpec, ens: float) -> dict[str, float]:
    rho, h = state.rho, state.h
    u = state.mom / rho
    mass = float(np.sum(rho)) * h
    mom = float(np.sum(state.mom)) * h
    seminorm = 0.0
    if kernel.is_singular:
        eps = kernel.eps_sing if kernel.eps_sing is not None else h
        seminorm = fractional_seminorm(state, kernel.s, state.p_exp, eps)
    return {
        "t": state.t,
        "dE": energy_fluctuations_hydro(state),
        "dv": float(np.max(u) - np.min(u)),
        "D": diameter(torus_length=state.L),
        "M": mass,
        "mom_x": mom,
        "E": total_energy_hydro(state),
        "ens": ens,
        "seminorm": seminorm,
        "umax": float(np.max(np.abs(u - mom / mass))),
    }


# ---------------------------------------------------------------------------
# reports


@dataclass
class BoundRecord:
    name: str
    anchor: str
    margin: float
    passed: bool | None
    t_worst: float | None = None
    tol: float | None = None
    fitted: float | None = None
    predicted: float | None = None
    note: str = ""

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["pass"] = d.pop("passed")
        return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in d.items()}


@dataclass
class BoundReport:
    records: list[BoundRecord] = field(default_factory=list)

    def add(self, rec: BoundRecord | list[BoundRecord]) -> None:
        self.records.extend(rec if isinstance(rec, list) else [rec])

    @property
    def passed(self) -> bool:
        """True unless some record failed; informational records (passed=None) do not count."""
        return all(r.passed is not False for r in self.records)

    def __getitem__(self, name: str) -> BoundRecord:
        for r in self.records:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_json(self) -> str:
        return json.dumps([r.to_dict() for r in self.records], indent=2)

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")


def _require_samples(trace: DiagnosticsTrace, k: int) -> None:
    if len(trace) < k:
        raise InvalidInputError(f"check needs at least {k} samples, trace has {len(trace)}")


def _centered_slopes(t, y):
    """Centered differences at interior samples and the local sample spacing."""
    slope = (y[2:] - y[:-2]) / (t[2:] - t[:-2])
    spacing = np.maximum(t[2:] - t[1:-1], t[1:-1] - t[:-2])
    return slope, spacing


def riccati_envelope(kernel: KernelSpec, r):
    """Envelope entering the decay inequalities; singular kernels use min(k(r), r^-(1+2sp))."""
    env = decreasing_envelope(kernel, r)
    if kernel.is_singular:
        env = np.minimum(env, kernel.singular_head(r))
    return env


def _mass(trace: DiagnosticsTrace) -> float:
    return float(trace.meta.get("mass", trace.M[0]))


def _worst(margin, tol, t, name, anchor, note="") -> BoundRecord:
    excess = margin - tol
    k = int(np.argmax(excess))
    return BoundRecord(name, anchor, float(margin[k]), bool(np.all(excess <= 0)), float(t[k]),
                       float(tol[k]), note=note)


def riccati_coefficient(trace: DiagnosticsTrace, p: float) -> float:
    if trace.meta.get("kind") == "hydro":
        return 2.0 ** p * _mass(trace) ** (2.0 - p)
    return 2.0 ** (p - 1.0)


def check_riccati(trace: DiagnosticsTrace, kernel: KernelSpec, c: float = RICCATI_C) -> BoundRecord:
    """Centered-difference slope of dE against -C k(D) dE^p at interior samples.

    For agent runs with p < 1 the right-hand side is the pairwise balance
    -(k(D)/2) (1/N^2) sum_{i != j} |v_i - v_j|^(2p) (stored in ``seminorm``).
    """
    _require_samples(trace, 3)
    p = float(trace.meta["p"])
    t, de = trace.t, trace.dE
    slope, spacing = _centered_slopes(t, de)
    k = riccati_envelope(kernel, trace.D[1:-1])
    if p < 1:
        bound = -0.5 * k * trace.seminorm[1:-1]
        note = "pairwise balance for p < 1"
    else:
        bound = -riccati_coefficient(trace, p) * k * de[1:-1] ** p
        note = ""
    tol = c * spacing ** 2 + RICCATI_ABS
    return _worst(slope - bound, tol, t[1:-1], "riccati", "energy-fluctuation Riccati inequality", note)


def check_alignment_balance_literal(trace: DiagnosticsTrace, kernel: KernelSpec,
                                    c: float = RICCATI_C) -> BoundRecord:
    """Slope of dE against the constant rate -k(D)/2.

    Informational: the slope of any aligning trace tends to 0, so this form
    cannot hold all the way to alignment.
    """
    _require_samples(trace, 3)
    t = trace.t
    slope, spacing = _centered_slopes(t, trace.dE)
    bound = -0.5 * riccati_envelope(kernel, trace.D[1:-1])
    tol = c * spacing ** 2 + RICCATI_ABS
    rec = _worst(slope - bound, tol, t[1:-1], "alignment-balance-constant",
                 "finite-time alignment balance, constant-rate form", note="informational")
    rec.passed = None
    return rec


def check_velocity_contraction(trace: DiagnosticsTrace, kernel: KernelSpec,
                               c: float = RICCATI_C) -> BoundRecord:
    """p = 1: slope of the velocity diameter against -k(D) M dv."""
    _require_samples(trace, 3)
    t = trace.t
    slope, spacing = _centered_slopes(t, trace.dv)
    bound = -riccati_envelope(kernel, trace.D[1:-1]) * _mass(trace) * trace.dv[1:-1]
    tol = c * spacing ** 2 + RICCATI_ABS
    return _worst(slope - bound, tol, t[1:-1], "velocity-contraction",
                  "pointwise velocity-diameter contraction")


def check_max_deviation(trace: DiagnosticsTrace, kernel: KernelSpec,
                        c: float = RICCATI_C) -> list[BoundRecord]:
    """p >= 1: slope of max|v - mean| against -(1/2) k(D) M v+^(2p-1).

    A second, informational record compares against the exponent p.
    """
    _require_samples(trace, 3)
    p = float(trace.meta["p"])
    t = trace.t
    slope, spacing = _centered_slopes(t, trace.umax)
    k = riccati_envelope(kernel, trace.D[1:-1]) * _mass(trace)
    vp = trace.umax[1:-1]
    tol = c * spacing ** 2 + RICCATI_ABS
    rec = _worst(slope + 0.5 * k * vp ** (2 * p - 1), tol, t[1:-1], "max-deviation",
                 "uniform velocity-deviation bound, exponent 2p-1")
    alt = _worst(slope + 0.5 * k * vp ** p, tol, t[1:-1], "max-deviation-exponent-p",
                 "uniform velocity-deviation bound, exponent p", note="informational")
    alt.passed = None
    return [rec, alt]


def _integrated_envelope(trace: DiagnosticsTrace, kernel: KernelSpec) -> np.ndarray:
    t = trace.t
    k = riccati_envelope(kernel, trace.D)
    return np.concatenate([[0.0], np.cumsum(0.5 * (k[1:] + k[:-1]) * np.diff(t))])


def theorem_envelope(trace: DiagnosticsTrace, kernel: KernelSpec, p: float | None = None) -> np.ndarray:
    """Integrated decay envelope for dE at the trace samples."""
    p = float(trace.meta["p"]) if p is None else float(p)
    mass = _mass(trace)
    integral = _integrated_envelope(trace, kernel)
    if p == 1:
        return np.exp(-2.0 * mass * integral) * trace.dE[0]
    with np.errstate(divide="ignore"):
        return ((p - 1.0) * 2.0 ** p * mass ** (2.0 - p) * integral) ** (-1.0 / (p - 1.0))


def check_theorem_envelope(trace: DiagnosticsTrace, kernel: KernelSpec, p: float | None = None,
                           tol: float = 1e-6) -> BoundRecord:
    """dE(t) <= envelope(t) (1 + tol) at every sample; margin is the worst relative excess."""
    p = float(trace.meta["p"]) if p is None else float(p)
    name, anchor = "theorem-envelope", "integrated energy-fluctuation decay envelope"
    if p < 1:
        return BoundRecord(name, anchor, 0.0, True, note="not applicable for p < 1")
    env = theorem_envelope(trace, kernel, p)
    de = trace.dE
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(de == 0, -1.0, np.where(env > 0, (de - env) / env, np.inf))
    rel = np.where(np.isinf(env), -1.0, rel)
    k = int(np.argmax(rel))
    return BoundRecord(name, anchor, float(rel[k]), bool(rel[k] <= tol), float(trace.t[k]), tol)


def initial_fluctuation_energy(trace: DiagnosticsTrace) -> float:
    """C_0^2: twice the initial energy measured in the mean-velocity frame."""
    m0 = trace.mom[0]
    return 2.0 * (trace.E[0] - float(np.dot(m0, m0)) / (2.0 * trace.M[0]))


def check_matrix_growth(trace: DiagnosticsTrace, kernel: KernelSpec, rtol: float = 1e-12) -> BoundRecord:
    """max|v - mean|^2 <= max|v(0) - mean|^2 + phi_+ C_0^2 t."""
    c0sq = initial_fluctuation_energy(trace)
    bound = trace.umax[0] ** 2 + kernel.upper_bound * c0sq * (trace.t - trace.t[0])
    margin = trace.umax ** 2 - bound
    tol = rtol * np.maximum(bound, 1.0)
    return _worst(margin, tol, trace.t, "matrix-growth", "matrix-kernel velocity growth bound")


def check_monotone(trace: DiagnosticsTrace, column: str = "dE", rtol: float = 1e-12) -> BoundRecord:
    y = trace.col(column)
    if len(y) < 2:
        return BoundRecord(f"{column}-monotone", "monotone decay", 0.0, True)
    rise = np.diff(y)
    k = int(np.argmax(rise))
    tol = rtol * abs(y[0])
    return BoundRecord(f"{column}-monotone", "monotone decay", float(rise[k]), bool(rise[k] <= tol),
                       float(trace.t[k + 1]), tol)


def check_conservation(trace: DiagnosticsTrace, mass_tol: float | None = None,
                       momentum_tol: float = 1e-10, energy_tol: float = 1e-9,
                       enstrophy_tol: float = 1e-6) -> list[BoundRecord]:
    """Mass drift, momentum drift, energy monotonicity and the enstrophy budget."""
    t = trace.t
    if mass_tol is None:
        mass_tol = 0.0 if trace.meta.get("kind") == "agents" else 1e-12
    mass = trace.M
    mdrift = np.abs(mass - mass[0]) / abs(mass[0])
    recs = [_worst(mdrift, np.full_like(mdrift, mass_tol), t, "mass", "mass conservation")]

    e0 = trace.E[0]
    mom = trace.mom
    scale = math.sqrt(max(2.0 * e0 * mass[0], np.finfo(float).tiny))
    pdrift = np.sqrt(np.sum((mom - mom[0]) ** 2, axis=1)) / scale
    recs.append(_worst(pdrift, np.full_like(pdrift, momentum_tol), t, "momentum",
                       "momentum conservation"))

    rises = np.diff(trace.E) if len(trace) > 1 else np.zeros(1)
    worst = float(np.max(rises))
    t_worst = float(t[int(np.argmax(rises)) + 1]) if len(trace) > 1 else float(t[0])
    step_rise = trace.meta.get("worst_energy_step_rise")
    if step_rise is not None and step_rise > worst:
        worst, t_worst = float(step_rise), None
    tol = energy_tol * e0
    recs.append(BoundRecord("energy", "total energy is nonincreasing", worst, bool(worst <= tol), t_worst,
                            float(tol)))

    budget = 2.0 * e0 * (1.0 + enstrophy_tol)
    ens = trace.ens
    recs.append(BoundRecord("enstrophy", "space-time enstrophy budget", float(ens[-1] - 2.0 * e0),
                            bool(ens[-1] <= budget), float(t[-1]), float(2.0 * e0 * enstrophy_tol)))
    return recs


def check_seminorm_budget(trace: DiagnosticsTrace, rho_floor: float) -> BoundRecord:
    """Time integral of the fractional seminorm against C_rho^2 C_0^2, C_rho = 1/rho_floor."""
    t, sn = trace.t, trace.seminorm
    cumulative = float(np.sum(0.5 * (sn[1:] + sn[:-1]) * np.diff(t))) if len(t) > 1 else 0.0
    budget = initial_fluctuation_energy(trace) / rho_floor ** 2
    return BoundRecord("seminorm-budget", "fractional seminorm space-time budget",
                       float(cumulative - budget), bool(cumulative <= budget), float(t[-1]), 0.0,
                       note=f"integral={cumulative:.6g}, budget={budget:.6g}")


# ---------------------------------------------------------------------------
# fits


class FitModel(str, Enum):
    PARETO_POWER = "ParetoPower"
    FRAC_EXP = "FracExp"
    DIAMETER_GROWTH = "DiameterGrowth"


class FitResult(NamedTuple):
    exponent: float
    amplitude: float
    residual: float


def fit_series(t, y, model: FitModel | str, y0: float | None = None, discard: float = 0.2,
               min_samples: int = 10) -> FitResult:
    """Least-squares exponent of ``y(t)`` over t in [t0 + discard (t_end - t0), t_end]."""
    model = FitModel(model)
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    t0, t1 = t[0], t[-1]
    sel = t >= t0 + discard * (t1 - t0)
    tw, yw = t[sel], y[sel]
    if tw.size < min_samples:
        raise FitDomainError(f"fit window holds {tw.size} samples, need {min_samples}")
    if np.any(tw <= 0) or np.any(yw <= 0):
        raise FitDomainError("non-positive values in the fit window")
    if model is FitModel.FRAC_EXP:
        y0 = y[0] if y0 is None else y0
        ratio = yw / y0
        if np.any(ratio >= 1):
            raise FitDomainError("FracExp needs y < y(0) throughout the fit window")
        yy = np.log(-np.log(ratio))
    else:
        yy = np.log(yw)
    xx = np.log(tw)
    slope, intercept = np.polyfit(xx, yy, 1)
    resid = yy - (slope * xx + intercept)
    return FitResult(float(slope), float(math.exp(intercept)), float(np.sqrt(np.mean(resid ** 2))))


def fit_decay_exponent(trace: DiagnosticsTrace, model: FitModel | str, column: str | None = None,
                       discard: float = 0.2) -> FitResult:
    """Fit ``column`` of the trace (default dE, or D for DiameterGrowth)."""
    model = FitModel(model)
    if column is None:
        column = "D" if model is FitModel.DIAMETER_GROWTH else "dE"
    y = trace.col(column)
    return fit_series(trace.t, y, model, y0=y[0], discard=discard)


# ---------------------------------------------------------------------------
# predicted constants and exponents


def scaled_mass(mass: float, c_k: float, c_d: float, beta: float, p: float) -> float:
    """M_p: 2 M C_k C_D^-beta for p = 1, (2^p M^(2-p) C_k C_D^-beta)^(-1/(p-1)) for p > 1."""
    base = c_k * c_d ** (-beta)
    if p == 1:
        return 2.0 * mass * base
    if p < 1:
        raise ParameterRangeError("scaled mass is defined for p >= 1")
    return (2.0 ** p * mass ** (2.0 - p) * base) ** (-1.0 / (p - 1.0))


def predicted_uniform_rate(p: float, beta: float) -> float:
    """Exponent of the algebraic decay of max|v - mean| for p > 1 (negative)."""
    if p <= 1:
        raise ParameterRangeError("algebraic rate needs p > 1")
    return -(1.0 - beta) / (2.0 * p - 2.0)


def predicted_frac_exp(beta: float) -> float:
    """Fractional power in exp(-C t^(1-beta)) for p = 1."""
    return 1.0 - beta


def dispersion_gamma_singular(p: float, s: float, dim: int) -> float:
    """gamma_p = (2p - 1) / (2p (1 + theta - s)), theta = d / (2p)."""
    theta = dim / (2.0 * p)
    return (2.0 * p - 1.0) / (2.0 * p * (1.0 + theta - s))


def dispersion_gamma_matrix(beta: float) -> float:
    """gamma = 2 / (2 - beta) for matrix kernels."""
    return 2.0 / (2.0 - beta)


def dispersion_gamma_large_p(p: float, dim: int, beta: float) -> float:
    """gamma = 2p (p - 3/2) / ((p - 1) d - beta), reported for p > 3/2 only."""
    if p <= 1.5:
        raise ParameterRangeError("defined for p > 3/2")
    return 2.0 * p * (p - 1.5) / ((p - 1.0) * dim - beta)


