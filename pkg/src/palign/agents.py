"""N-agent p-alignment system with scalar and matrix kernels.

Velocities obey

    dv_i/dt = (1/N) sum_j phi(x_i, x_j) |v_j - v_i|^(2p-2) (v_j - v_i),

positions follow dx_i/dt = v_i. All pairwise sums run row by row with a fixed
inner order (see :mod:`palign.parallel`), so results do not depend on the
thread count.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import diagnostics as dg
from .errors import CollisionError, ConfigError, InvalidInputError, PalignError, StiffnessError
from .kernels import Family, KernelSpec
from .parallel import map_rows, ordered_sum

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class AgentState:
    t: float
    positions: np.ndarray
    velocities: np.ndarray
    p: float

    def __post_init__(self):
        x = np.array(self.positions, dtype=float, copy=True)
        v = np.array(self.velocities, dtype=float, copy=True)
        if x.ndim == 1:
            x = x[:, None]
        if v.ndim == 1:
            v = v[:, None]
        if x.shape != v.shape:
            raise InvalidInputError(f"positions {x.shape} and velocities {v.shape} differ")
        if x.shape[0] < 2:
            raise InvalidInputError("need at least two agents")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v)) and math.isfinite(self.t)):
            raise InvalidInputError("non-finite agent state")
        if not self.p >= 0:
            raise InvalidInputError(f"p must be >= 0, got {self.p}")
        x.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "positions", x)
        object.__setattr__(self, "velocities", v)
        object.__setattr__(self, "t", float(self.t))
        object.__setattr__(self, "p", float(self.p))

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]


class Method(str, Enum):
    RK4 = "RK4"
    SSP_RK2 = "SSP-RK2"
    EULER = "Euler"


# (a, b) Butcher tableaux for the explicit schemes
_TABLEAUX = {
    Method.RK4: ([[], [0.5], [0.0, 0.5], [0.0, 0.0, 1.0]], [1 / 6, 1 / 3, 1 / 3, 1 / 6]),
    Method.SSP_RK2: ([[], [1.0]], [0.5, 0.5]),
    Method.EULER: ([[]], [1.0]),
}


@dataclass(frozen=True)
class StepControl:
    """Time-step settings.

    ``dt_min`` defaults to ``dt * 1e-12`` and ``align_tol`` to ``1e-9 * dv(0)``
    at the start of a run. Velocity pairs closer than ``merge_tol`` (default
    ``align_tol``) count as merged when p < 1. ``collision_policy`` decides
    whether such merges are logged or raise for 1/2 < p < 1.
    """

    dt: float
    method: Method = Method.RK4
    dt_min: float | None = None
    align_tol: float | None = None
    merge_tol: float | None = None
    collision_policy: str = "log"

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        if not self.dt > 0:
            raise ConfigError("dt must be > 0")
        if self.dt_min is not None and not 0 < self.dt_min < self.dt:
            raise ConfigError("need dt > dt_min > 0")
        if self.align_tol is not None and not self.align_tol > 0:
            raise ConfigError("align_tol must be > 0")
        if self.merge_tol is not None and not self.merge_tol >= 0:
            raise ConfigError("merge_tol must be >= 0")
        if self.collision_policy not in ("log", "forbid"):
            raise ConfigError("collision_policy must be 'log' or 'forbid'")

    @property
    def resolved_dt_min(self) -> float:
        return self.dt_min if self.dt_min is not None else self.dt * 1e-12

    @property
    def resolved_merge_tol(self) -> float:
        if self.merge_tol is not None:
            return self.merge_tol
        return self.align_tol if self.align_tol is not None else 0.0


def _check_kernel(kernel: KernelSpec, p: float, dim: int) -> None:
    if kernel.family is Family.MATRIX and p != 1:
        raise ConfigError("matrix kernels are defined only for p = 1")
    if kernel.family is Family.MATRIX and kernel.dim != dim:
        raise ConfigError(f"matrix kernel has dim {kernel.dim}, agents live in dim {dim}")


def _pair_weights(x, v, kernel, p, merge_tol, t, policy, lo, hi):
    """Weights w_ij = phi_ij |v_j - v_i|^(2p-2) and differences v_j - v_i for rows lo:hi.

    Arrays are laid out with the inner index j first, shape (N, hi - lo, ...).
    """
    n, d = x.shape
    dx = x[:, None, :] - x[None, lo:hi, :]
    dv = v[:, None, :] - v[None, lo:hi, :]
    r2 = dx[..., 0] * dx[..., 0]
    g2 = dv[..., 0] * dv[..., 0]
    for k in range(1, d):
        r2 = r2 + dx[..., k] * dx[..., k]
        g2 = g2 + dv[..., k] * dv[..., k]
    rows = np.arange(hi - lo)
    cols = np.arange(lo, hi)
    with np.errstate(divide="ignore"):
        phi = kernel.profile(np.sqrt(r2))
    phi[cols, rows] = 0.0
    if not np.all(np.isfinite(phi)):
        j, i = np.argwhere(~np.isfinite(phi))[0]
        raise CollisionError(lo + i, j, t, reason="position collision under a singular kernel")
    if p == 1:
        return phi, dv, g2
    g = np.sqrt(g2)
    off = np.ones_like(g, dtype=bool)
    off[cols, rows] = False
    if p < 1:
        merged = off & (g <= merge_tol)
        if np.any(merged):
            j, i = np.argwhere(merged)[0]
            i += lo
            if p < 0.5:
                raise CollisionError(i, j, t)
            if p == 0.5:
                same_place = merged & (r2 == 0)
                if np.any(same_place):
                    j, i = np.argwhere(same_place)[0]
                    raise CollisionError(lo + i, j, t, reason="velocity-position collision")
            elif policy == "forbid":
                raise CollisionError(i, j, t)
            else:
                log.debug("agents %d and %d merged in velocity at t=%g", i, j, t)
        active = off & ~merged
    else:
        active = off
    w = np.zeros_like(g)
    w[active] = phi[active] * g[active] ** (2 * p - 2)
    return w, dv, g2


def _apply_matrix(a, vecs):
    """vecs @ a for a symmetric d x d matrix, accumulated in a fixed order."""
    d = a.shape[0]
    out = np.empty_like(vecs)
    for l in range(d):
        col = vecs[..., 0] * a[0, l]
        for k in range(1, d):
            col = col + vecs[..., k] * a[k, l]
        out[..., l] = col
    return out


def _rhs_block(x, v, kernel, p, merge_tol, t, policy, lo, hi):
    n, d = x.shape
    w, dv, g2 = _pair_weights(x, v, kernel, p, merge_tol, t, policy, lo, hi)
    acc = ordered_sum(w[..., None] * dv) / n
    if kernel.family is Family.MATRIX:
        # explicit loops instead of BLAS so every row is computed the same way
        a = kernel.aniso_array
        acc = _apply_matrix(a, acc)
        adv = _apply_matrix(a, dv)
        quad = dv[..., 0] * adv[..., 0]
        for k in range(1, d):
            quad = quad + dv[..., k] * adv[..., k]
        diss = ordered_sum(w * quad)
    else:
        diss = ordered_sum(w * g2)
    return np.concatenate([acc, diss[:, None]], axis=1)


def _rhs_full(x, v, kernel, p, merge_tol=0.0, t=0.0, policy="log"):
    """Accelerations (N, d) and the dissipation rate (1/N^2) sum_ij w_ij |v_j - v_i|^2."""
    n, d = x.shape
    out = map_rows(lambda lo, hi: _rhs_block(x, v, kernel, p, merge_tol, t, policy, lo, hi), n)
    acc = out[:, :d]
    diss = float(ordered_sum(out[:, d])) / (n * n)
    return acc, diss


def p_alignment_rhs(state: AgentState, kernel: KernelSpec, merge_tol: float = 0.0,
                    collision_policy: str = "log") -> np.ndarray:
    """Accelerations a_i of the p-alignment system, shape (N, d)."""
    _check_kernel(kernel, state.p, state.dim)
    acc, _ = _rhs_full(state.positions, state.velocities, kernel, state.p, merge_tol,
                       state.t, collision_policy)
    return acc


def _min_relative_gap(v, acc, merge_tol):
    """Smallest unmerged |v_i - v_j| and the largest |a_i - a_j| / |v_i - v_j| over such pairs."""
    dv = v[None, :, :] - v[:, None, :]
    da = acc[None, :, :] - acc[:, None, :]
    g = np.sqrt(np.sum(dv * dv, axis=-1))
    ga = np.sqrt(np.sum(da * da, axis=-1))
    mask = g > merge_tol
    np.fill_diagonal(mask, False)
    if not np.any(mask):
        return math.inf, 0.0
    return float(np.min(g[mask])), float(np.max(ga[mask] / g[mask]))


def _no_overshoot(v_old, v_new, merge_tol) -> bool:
    """True when no unmerged velocity pair passed through each other during the step."""
    d0 = v_old[None, :, :] - v_old[:, None, :]
    d1 = v_new[None, :, :] - v_new[:, None, :]
    g0 = np.sqrt(np.sum(d0 * d0, axis=-1))
    mask = g0 > merge_tol
    return bool(np.all(np.sum(d0 * d1, axis=-1)[mask] >= 0))


def _rk_step(x, v, q, dt, kernel, p, method, merge_tol, t, policy, k1=None):
    a_tab, b_tab = _TABLEAUX[method]
    ks = []
    for s, row in enumerate(a_tab):
        if s == 0 and k1 is not None:
            ks.append(k1)
            continue
        xs, vs = x, v
        for c, (kx, kv, _) in zip(row, ks):
            if c:
                xs = xs + (c * dt) * kx
                vs = vs + (c * dt) * kv
        acc, diss = _rhs_full(xs, vs, kernel, p, merge_tol, t, policy)
        ks.append((vs, acc, diss))
    xn, vn, qn = x, v, q
    for b, (kx, kv, kq) in zip(b_tab, ks):
        xn = xn + (b * dt) * kx
        vn = vn + (b * dt) * kv
        qn = qn + (b * dt) * kq
    return xn, vn, qn


def _advance(state: AgentState, kernel: KernelSpec, ctl: StepControl, q: float, dt: float):
    """One step of at most ``dt``; returns (new state, new q, dt actually used)."""
    x, v, p = state.positions, state.velocities, state.p
    merge_tol = ctl.resolved_merge_tol
    policy = ctl.collision_policy
    if p >= 1:
        xn, vn, qn = _rk_step(x, v, q, dt, kernel, p, ctl.method, merge_tol, state.t, policy)
        return AgentState(state.t + dt, xn, vn, p), qn, dt
    acc, diss = _rhs_full(x, v, kernel, p, merge_tol, state.t, policy)
    gmin, rate = _min_relative_gap(v, acc, merge_tol)
    dt_min = ctl.resolved_dt_min
    # halve until no unmerged pair can close by more than half its gap
    if rate > 0:
        cap = 0.5 / rate
        if dt > cap:
            dt = dt / 2.0 ** math.ceil(math.log2(dt / cap))
    while True:
        if dt < dt_min:
            raise StiffnessError(f"step {dt:.3g} fell below dt_min={dt_min:.3g} at t={state.t:.17g}")
        xn, vn, qn = _rk_step(x, v, q, dt, kernel, p, ctl.method, merge_tol, state.t, policy,
                              k1=(v, acc, diss))
        if _no_overshoot(v, vn, merge_tol):
            return AgentState(state.t + dt, xn, vn, p), qn, dt
        dt /= 2.0


def step(state: AgentState, kernel: KernelSpec, ctl: StepControl) -> AgentState:
    """Advance one step of ``ctl.method`` (adaptive halving for p < 1)."""
    _check_kernel(kernel, state.p, state.dim)
    new, _, _ = _advance(state, kernel, ctl, 0.0, ctl.dt)
    return new


def run(initial: AgentState, kernel: KernelSpec, ctl: StepControl, t_end: float,
        sample_every: int = 1) -> dg.DiagnosticsTrace:
    """Integrate to ``t_end`` (or until aligned) and return the sampled trace.

    Errors raised during integration end the run; the trace so far is returned
    with ``meta['status'] == 'error'`` and the message in ``meta['error']``.
    """
    if t_end < initial.t:
        raise ConfigError("t_end must not precede the initial time")
    if sample_every < 1:
        raise ConfigError("sample_every must be >= 1")
    _check_kernel(kernel, initial.p, initial.dim)
    dv0 = dg.velocity_diameter(initial.velocities)
    align_tol = ctl.align_tol if ctl.align_tol is not None else max(1e-9 * dv0, 1e-300)
    ctl = dataclasses.replace(ctl, align_tol=align_tol)
    merge_tol = ctl.resolved_merge_tol

    trace = dg.DiagnosticsTrace.empty(dg.agent_meta(initial, kernel, ctl))
    state, q = initial, 0.0
    trace.add(dg.agent_sample(state, q, merge_tol))
    energy = dg.kinetic_energy_agents(state.velocities)
    vplus = dg.max_deviation(state.velocities)
    worst_energy_rise = 0.0
    worst_vplus_rise = 0.0
    dv_prev, t_prev = dv0, state.t
    n_steps = 0
    fixed = initial.p >= 1
    total_steps = max(1, round((t_end - initial.t) / ctl.dt)) if fixed else None
    status = "completed"
    try:
        if dv0 < align_tol:
            status = "aligned-early"
            trace.meta["t_c"] = initial.t
        while status == "completed" and state.t < t_end and not (fixed and n_steps >= total_steps):
            if fixed:
                # exact sample times t0 + k dt, last step lands on t_end
                target = initial.t + (n_steps + 1) * (t_end - initial.t) / total_steps
                dt = target - state.t
            else:
                dt = min(ctl.dt, t_end - state.t)
            state, q, used = _advance(state, kernel, ctl, q, dt)
            if fixed:
                state = dataclasses.replace(state, t=target)
            n_steps += 1
            e_new = dg.kinetic_energy_agents(state.velocities)
            worst_energy_rise = max(worst_energy_rise, e_new - energy)
            energy = e_new
            vp_new = dg.max_deviation(state.velocities)
            worst_vplus_rise = max(worst_vplus_rise, vp_new - vplus)
            vplus = vp_new
            dv_now = dg.velocity_diameter(state.velocities)
            if dv_now < align_tol:
                status = "aligned-early"
                frac = (dv_prev - align_tol) / (dv_prev - dv_now) if dv_prev > dv_now else 1.0
                trace.meta["t_c"] = t_prev + frac * (state.t - t_prev)
            dv_prev, t_prev = dv_now, state.t
            if status != "completed" or n_steps % sample_every == 0 or state.t >= t_end:
                trace.add(dg.agent_sample(state, q, merge_tol))
    except PalignError as exc:
        status = "error"
        trace.meta["error"] = f"{type(exc).__name__}: {exc}"
        if trace.t[-1] < state.t:
            trace.add(dg.agent_sample(state, q, merge_tol))
    trace.meta.update(
        status=status,
        steps=n_steps,
        align_tol=align_tol,
        worst_energy_step_rise=worst_energy_rise,
        worst_umax_step_rise=worst_vplus_rise,
    )
    if trace.t[-1] < state.t:
        trace.add(dg.agent_sample(state, q, merge_tol))
    trace.final_state = state
    return trace


def random_initial_state(n: int, dim: int, p: float, seed: int, box: float = 1.0,
                         v0: float = 1.0) -> AgentState:
    """Positions uniform in [0, box)^d, velocities uniform in the ball of radius v0."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, box, size=(n, dim))
    direction = rng.normal(size=(n, dim))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    radius = v0 * rng.uniform(size=(n, 1)) ** (1.0 / dim)
    return AgentState(0.0, x, direction * radius, p)
