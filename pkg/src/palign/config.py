"""Experiment configuration: TOML text validated into pydantic models."""

from __future__ import annotations

import sys
from typing import Literal

import tomli_w
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class KernelConfig(_Strict):
    family: Literal["heavy_tail", "singular_heavy_tail", "matrix", "tabulated"] = "heavy_tail"
    beta: float = Field(0.0, ge=0)
    c_k: float = Field(1.0, gt=0)
    r_scale: float = Field(1.0, gt=0)
    s: float = Field(0.5, gt=0, lt=1)
    dim: int | None = Field(None, ge=1, le=3)
    phi_plus: float | None = Field(None, gt=0)
    aniso: list[list[float]] | None = None
    eps_sing: float | None = Field(None, gt=0)
    table: str | None = None


class InitialConfig(_Strict):
    generator: Literal["random", "explicit", "uniform", "sine", "bump", "csv"] = "random"
    seed: int | None = None
    # agents
    box: float = Field(1.0, gt=0)
    v0: float = Field(1.0, gt=0)
    positions: list[list[float]] | None = None
    velocities: list[list[float]] | None = None
    # hydro
    rho0: float = Field(1.0, gt=0)
    amplitude: float = 0.1
    e0: float = Field(0.0, ge=0)
    height: float = 0.5
    width: float = Field(0.1, gt=0)
    mode: int = Field(1, ge=1)
    path: str | None = None


class DynamicsConfig(_Strict):
    p: float = Field(1.0, ge=0)
    t_end: float = Field(1.0, ge=0)
    # agents
    n_agents: int = Field(2, ge=2)
    dim: int = Field(2, ge=1, le=3)
    dt: float = Field(0.01, gt=0)
    method: Literal["RK4", "SSP-RK2", "Euler"] = "RK4"
    dt_min: float | None = Field(None, gt=0)
    align_tol: float | None = Field(None, gt=0)
    merge_tol: float | None = Field(None, ge=0)
    collision_policy: Literal["log", "forbid"] = "log"
    # hydro
    n_cells: int = Field(256, ge=2)
    length: float = Field(1.0, gt=0)
    cfl: float = Field(0.4, gt=0, le=0.5)
    rho_floor: float = Field(1e-6, gt=0)
    pressure_mode: Literal["Pressureless", "EntropicEquality"] = "Pressureless"
    sink_mode: Literal["PerPair", "SymmetricP"] | None = None
    initial: InitialConfig = InitialConfig()


class FitConfig(_Strict):
    model: Literal["ParetoPower", "FracExp", "DiameterGrowth"]
    column: str | None = None
    discard: float = Field(0.2, ge=0, lt=1)
    max_exponent: float | None = None
    min_exponent: float | None = None
    predicted: float | None = None


CHECK_NAMES = (
    "conservation",
    "riccati",
    "theorem_envelope",
    "velocity_contraction",
    "max_deviation",
    "matrix_growth",
    "monotone",
    "seminorm_budget",
    "alignment_time",
    "aligned",
    "closed_form",
    "max_principle",
    "entropy_sign",
    "clip_rate",
    "internal_energy_decay",
    "fits",
)


class ChecksConfig(_Strict):
    enabled: list[Literal[CHECK_NAMES]] = ["conservation"]  # type: ignore[valid-type]
    riccati_c: float | None = Field(None, gt=0)
    envelope_tol: float = Field(1e-6, gt=0)
    mass_tol: float | None = Field(None, ge=0)
    momentum_tol: float = Field(1e-10, gt=0)
    energy_tol: float = Field(1e-9, gt=0)
    enstrophy_tol: float = Field(1e-6, gt=0)
    monotone_tol: float = Field(1e-12, gt=0)
    closed_form_tol: float = Field(1e-7, gt=0)
    expected_t_c: float | None = Field(None, gt=0)
    t_c_tol: float | None = Field(None, gt=0)
    aligned_below: float = Field(1e-12, gt=0)
    max_principle_tol: float = Field(1e-10, gt=0)
    entropy_tol_factor: float = Field(10.0, gt=0)
    clip_fraction: float = Field(1e-3, gt=0)
    internal_energy_fraction: float = Field(0.1, gt=0)
    fits: list[FitConfig] = []


class OutputConfig(_Strict):
    directory: str | None = None
    sample_every: int = Field(1, ge=1)
    snapshot_every: int = Field(0, ge=0)


class ExperimentConfig(_Strict):
    mode: Literal["agents", "hydro", "analyze"] = "agents"
    name: str = "experiment"
    system: Literal["agents", "hydro"] | None = None
    trace: str | None = None
    kernel: KernelConfig = KernelConfig()
    dynamics: DynamicsConfig = DynamicsConfig()
    checks: ChecksConfig = ChecksConfig()
    output: OutputConfig = OutputConfig()

    @property
    def kind(self) -> str:
        """The simulated system: 'agents' or 'hydro' (analyze mode names it in ``system``)."""
        if self.mode == "analyze":
            return self.system or "agents"
        return self.mode

    @model_validator(mode="after")
    def _consistency(self):
        k, dyn = self.kernel, self.dynamics
        kind = self.kind
        if k.family == "matrix":
            if dyn.p != 1:
                raise ValueError("matrix kernels require p = 1")
            if kind == "hydro":
                raise ValueError("matrix kernels are only available for agents")
            if k.aniso is None:
                raise ValueError("matrix kernels need kernel.aniso")
        if k.family == "tabulated" and k.table is None:
            raise ValueError("tabulated kernels need kernel.table")
        if kind == "hydro":
            if dyn.p < 1:
                raise ValueError("hydro runs need p >= 1")
            if k.dim not in (None, 1):
                raise ValueError("hydro runs are one-dimensional (kernel.dim = 1)")
            if dyn.initial.generator in ("random", "explicit"):
                raise ValueError(f"generator {dyn.initial.generator!r} is for agent runs")
            if dyn.sink_mode == "PerPair" and dyn.p != 1:
                raise ValueError("sink_mode PerPair requires p = 1")
        else:
            if dyn.initial.generator not in ("random", "explicit"):
                raise ValueError(f"generator {dyn.initial.generator!r} is for hydro runs")
            if dyn.initial.generator == "random" and dyn.initial.seed is None:
                raise ValueError("dynamics.initial.seed is required for random initial data")
            if dyn.initial.generator == "explicit":
                pos, vel = dyn.initial.positions, dyn.initial.velocities
                if pos is None or vel is None:
                    raise ValueError("explicit initial data needs positions and velocities")
                if len(pos) != dyn.n_agents or len(vel) != dyn.n_agents:
                    raise ValueError("explicit initial data must list n_agents rows")
                if any(len(r) != dyn.dim for r in pos + vel):
                    raise ValueError("explicit initial rows must have dim entries")
        if dyn.initial.generator == "csv" and dyn.initial.path is None:
            raise ValueError("csv initial data needs dynamics.initial.path")
        if self.mode == "analyze" and self.system is None:
            raise ValueError("analyze mode needs 'system' (agents or hydro)")
        if "fits" in self.checks.enabled and not self.checks.fits:
            raise ValueError("the 'fits' check needs at least one [[checks.fits]] entry")
        return self


def _format_validation(err: ValidationError) -> str:
    parts = []
    for e in err.errors():
        loc = ".".join(str(x) for x in e["loc"])
        parts.append(f"{loc}: {e['msg']}" if loc else e["msg"])
    return "; ".join(parts)


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate TOML experiment text; errors name the offending line or field."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config parse error: {exc}") from None
    return config_from_dict(raw)


def config_from_dict(raw: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(f"invalid config: {_format_validation(exc)}") from None


def serialize_config(cfg: ExperimentConfig) -> str:
    return tomli_w.dumps(cfg.model_dump(mode="json", exclude_none=True))


def load_config(path) -> ExperimentConfig:
    from pathlib import Path

    return parse_config(Path(path).read_text())


def with_seed(cfg: ExperimentConfig, seed: int) -> ExperimentConfig:
    data = cfg.model_dump(mode="json", exclude_none=True)
    data["dynamics"].setdefault("initial", {})["seed"] = int(seed)
    return config_from_dict(data)
