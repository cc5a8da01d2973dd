"""Communication kernels: heavy-tailed, singular heavy-tailed, matrix-valued and tabulated."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ConfigError, InvalidInputError


class Family(str, Enum):
    HEAVY_TAIL = "heavy_tail"
    SINGULAR_HEAVY_TAIL = "singular_heavy_tail"
    MATRIX = "matrix"
    TABULATED = "tabulated"


@dataclass(frozen=True)
class KernelSpec:
    """Immutable description of a communication kernel phi(x, y) = profile(|x - y|).

    ``c_k`` is the tail amplitude for the heavy-tail and matrix families. For the
    singular family it is ignored and replaced by the value that makes the
    profile continuous at ``r_scale`` (see :attr:`tail_amplitude`).
    ``eps_sing`` floors the singular head; ``None`` means no floor, which the
    hydro solver replaces by the grid spacing.
    """

    family: Family = Family.HEAVY_TAIL
    beta: float = 0.0
    c_k: float = 1.0
    r_scale: float = 1.0
    s: float = 0.5
    p: float = 1.0
    dim: int = 1
    phi_plus: float | None = None
    aniso: tuple[tuple[float, ...], ...] | None = None
    eps_sing: float | None = None
    table_r: tuple[float, ...] | None = None
    table_phi: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if self.dim not in (1, 2, 3):
            raise ConfigError(f"dim must be 1, 2 or 3, got {self.dim}")
        if not (np.isfinite(self.beta) and self.beta >= 0):
            raise ConfigError(f"beta must be >= 0, got {self.beta}")
        if not self.c_k > 0:
            raise ConfigError(f"c_k must be > 0, got {self.c_k}")
        if not self.r_scale > 0:
            raise ConfigError(f"r_scale must be > 0, got {self.r_scale}")
        if not self.p >= 0:
            raise ConfigError(f"p must be >= 0, got {self.p}")
        if self.eps_sing is not None and not self.eps_sing > 0:
            raise ConfigError("eps_sing must be > 0")
        if self.family is Family.SINGULAR_HEAVY_TAIL:
            if not 0 < self.s < 1:
                raise ConfigError(f"singular kernels need 0 < s < 1, got {self.s}")
            if self.beta > self.head_order:
                # the tail would drop below the singular head continuation
                raise ConfigError("singular kernels need beta <= d + 2 s p")
        if self.family is Family.MATRIX:
            if self.p != 1:
                raise ConfigError("matrix kernels are defined only for p = 1")
            if self.aniso is None:
                raise ConfigError("matrix kernels need an 'aniso' matrix")
            a = np.asarray(self.aniso, dtype=float)
            if a.shape != (self.dim, self.dim):
                raise ConfigError(f"aniso must be {self.dim}x{self.dim}, got shape {a.shape}")
            if not np.allclose(a, a.T, rtol=0, atol=0):
                raise ConfigError("aniso must be symmetric")
            lam = np.linalg.eigvalsh(a)
            if lam[0] <= 0:
                raise ConfigError("aniso must be positive definite")
            if self.phi_plus is not None and self.phi_plus < self.c_k * lam[-1] * (1 - 1e-12):
                raise ConfigError("phi_plus is below c_k * lambda_max(aniso)")
        if self.family is Family.TABULATED:
            if self.table_r is None or self.table_phi is None:
                raise ConfigError("tabulated kernels need table_r and table_phi")
            r = np.asarray(self.table_r, dtype=float)
            f = np.asarray(self.table_phi, dtype=float)
            if r.ndim != 1 or r.shape != f.shape or r.size < 1:
                raise ConfigError("table_r and table_phi must be 1D arrays of equal length")
            if np.any(np.diff(r) <= 0) or r[0] < 0:
                raise ConfigError("table_r must be non-negative and strictly increasing")
            if np.any(f <= 0) or not np.all(np.isfinite(f)):
                raise ConfigError("table_phi must be finite and positive")

    @property
    def head_order(self) -> float:
        """Exponent d + 2 s p of the singular head."""
        return self.dim + 2.0 * self.s * self.p

    @property
    def tail_amplitude(self) -> float:
        if self.family is Family.SINGULAR_HEAVY_TAIL:
            return self.r_scale ** (-self.head_order) * (1.0 + self.r_scale) ** self.beta
        return self.c_k

    @property
    def is_singular(self) -> bool:
        return self.family is Family.SINGULAR_HEAVY_TAIL

    @property
    def aniso_array(self) -> np.ndarray:
        return np.asarray(self.aniso, dtype=float)

    @property
    def lower_amplitude(self) -> float:
        """Amplitude of the scalar lower bound C_k <r>^-beta of the kernel."""
        if self.family is Family.MATRIX:
            return self.c_k * float(np.linalg.eigvalsh(self.aniso_array)[0])
        return self.tail_amplitude

    @property
    def upper_bound(self) -> float:
        """phi_+ for matrix kernels."""
        if self.family is not Family.MATRIX:
            raise ConfigError("phi_plus is defined for matrix kernels only")
        if self.phi_plus is not None:
            return float(self.phi_plus)
        return self.c_k * float(np.linalg.eigvalsh(self.aniso_array)[-1])

    def with_eps(self, eps: float) -> "KernelSpec":
        return dataclasses.replace(self, eps_sing=eps)

    def profile(self, r) -> np.ndarray:
        """Radial profile evaluated at separations ``r`` (array or scalar).

        For the matrix family this is the scalar factor C_k <r>^-beta multiplying
        the anisotropy matrix.
        """
        r = np.asarray(r, dtype=float)
        fam = self.family
        if fam is Family.HEAVY_TAIL or fam is Family.MATRIX:
            if self.beta == 0:
                return np.full(r.shape, self.c_k)
            return self.c_k * (1.0 + r) ** (-self.beta)
        if fam is Family.SINGULAR_HEAVY_TAIL:
            head = self.head_order
            floor = self.eps_sing if self.eps_sing is not None else 0.0
            with np.errstate(divide="ignore"):
                near = np.maximum(r, floor) ** (-head)
            if self.beta == 0:
                far = np.full(r.shape, self.tail_amplitude)
            else:
                far = self.tail_amplitude * (1.0 + r) ** (-self.beta)
            return np.where(r <= self.r_scale, near, far)
        tr = np.asarray(self.table_r)
        tf = np.asarray(self.table_phi)
        return np.interp(r, tr, tf)

    def singular_head(self, r) -> np.ndarray:
        """The pure power r^-(d + 2 s p), without floor or tail."""
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore"):
            return r ** (-self.head_order)


def _check_points(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.shape != y.shape:
        raise InvalidInputError(f"points have different shapes {x.shape} and {y.shape}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise InvalidInputError("non-finite point")
    return x, y


def separation(x, y) -> float:
    x, y = _check_points(x, y)
    d = x - y
    return float(np.sqrt(np.sum(d * d)))


def evaluate(spec: KernelSpec, x, y) -> float:
    """phi(x, y) for a scalar kernel family."""
    if spec.family is Family.MATRIX:
        raise ConfigError("use evaluate_matrix for matrix kernels")
    r = separation(x, y)
    val = float(spec.profile(r))
    if not np.isfinite(val):
        raise InvalidInputError("kernel is infinite at zero separation; set eps_sing")
    return val


def evaluate_matrix(spec: KernelSpec, x, y) -> np.ndarray:
    """Phi(x, y) = C_k <|x - y|>^-beta * aniso."""
    if spec.family is not Family.MATRIX:
        raise ConfigError("evaluate_matrix needs a matrix kernel")
    r = separation(x, y)
    return float(spec.profile(r)) * spec.aniso_array


def decreasing_envelope(spec: KernelSpec, r):
    """k(r) = min of the profile over separations <= r.

    Accepts scalars or arrays and returns the same shape.
    """
    scalar = np.ndim(r) == 0
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise InvalidInputError("envelope needs r >= 0")
    if spec.family is Family.TABULATED:
        tr = np.asarray(spec.table_r)
        runmin = np.minimum.accumulate(np.asarray(spec.table_phi))
        idx = np.searchsorted(tr, r, side="right") - 1
        at_r = spec.profile(r)
        env = np.where(idx >= 0, np.minimum(runmin[np.clip(idx, 0, None)], at_r), at_r)
    elif spec.family is Family.MATRIX:
        env = spec.profile(r) * (spec.lower_amplitude / spec.c_k)
    else:
        # heavy-tail and floored singular profiles are already nonincreasing
        env = spec.profile(r)
    return float(env) if scalar else env


def load_table(path: str | Path) -> tuple[tuple[float, ...], tuple[float, ...]]:
    """Read a two-column CSV (r, phi) with an optional header line."""
    text = Path(path).read_text().strip().splitlines()
    rows = []
    for line in text:
        parts = [c.strip() for c in line.split(",")]
        if len(parts) != 2:
            raise ConfigError(f"kernel table {path}: expected two columns, got {line!r}")
        try:
            rows.append((float(parts[0]), float(parts[1])))
        except ValueError:
            if rows:
                raise ConfigError(f"kernel table {path}: bad row {line!r}") from None
    if not rows:
        raise ConfigError(f"kernel table {path} is empty")
    r, f = zip(*rows)
    return tuple(r), tuple(f)
