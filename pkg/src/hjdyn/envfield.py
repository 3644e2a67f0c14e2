"""Slab-structured random space-time media.

An environment supplies the coefficient field a(x,t), the potential
V(x,t), and a per-slab envelope value nu_t >= 1.  Time is cut into unit
slabs [j, j+1); everything inside a slab is drawn from the slab's own
counter-hash stream, so disjoint slabs are independent and a replay with
the same spec is byte-identical.

Within a slab the fields are constant in time.  Space is cut into cells
of side ``cell_size``; each cell carries an i.i.d. signed unit amplitude
and an i.i.d. coupling value, modulated by a C^1 tensor-product cubic
bump so that pointwise samples vary smoothly inside a cell.  One uniform
shift per slab decorrelates the cell lattice from the coordinate axes
and makes single-point statistics invariant under lattice translations.

The slab scale S_j multiplies every amplitude in slab j, so
sup_x |V(x,t)| = S_j almost surely and

    nu_t = 1 + nu_coupling * S_j

is a genuine envelope for the whole (infinite) slab, not just for the
cells a solver happens to touch.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import json
import math
from typing import Callable

import numpy as np

from ._rng import counter_hash, unit_uniform
from .errors import ValidationError

FORMAT_VERSION = 1

# hash channels
_CH_SCALE = 0
_CH_SHIFT = 1
_CH_AMP = 2
_CH_COUP = 3

# exponential-tail amplitudes are clipped at the 1 - 1e-12 quantile so the
# slab scale (and with it nu) stays finite with a documented worst case
_CLIP_TAIL = 1e-12

__all__ = [
    "AmplitudeLaw",
    "EnvironmentSpec",
    "Environment",
    "AnalyticEnvironment",
    "make_environment",
    "free_environment",
    "periodic_cos_environment",
    "sample_fields",
    "nu_at",
    "nu_integral",
    "spec_to_json",
    "spec_from_json",
]


@dataclass(frozen=True)
class AmplitudeLaw:
    """Law of the per-slab amplitude scale S_j.

    bounded(v_max): S_j uniform on [0, v_max]; potentials never exceed
    v_max in absolute value.  exponential_tail(rate): S_j exponential
    with the given rate, clipped at the 1 - 1e-12 quantile.
    """

    kind: str
    v_max: float = 0.0
    rate: float = 1.0

    @staticmethod
    def bounded(v_max: float) -> "AmplitudeLaw":
        return AmplitudeLaw(kind="bounded", v_max=float(v_max))

    @staticmethod
    def exponential_tail(rate: float) -> "AmplitudeLaw":
        return AmplitudeLaw(kind="exponential_tail", rate=float(rate))

    def validate(self) -> None:
        if self.kind not in ("bounded", "exponential_tail"):
            raise ValidationError(f"unknown amplitude law {self.kind!r}")
        if self.kind == "bounded" and not (self.v_max >= 0.0):
            raise ValidationError("bounded law needs v_max >= 0")
        if self.kind == "exponential_tail" and not (self.rate > 0.0):
            raise ValidationError("exponential_tail law needs rate > 0")

    @property
    def scale_high(self) -> float:
        """Almost-sure upper bound for S_j."""
        if self.kind == "bounded":
            return self.v_max
        return -math.log(_CLIP_TAIL) / self.rate

    def draw_scales(self, u: np.ndarray) -> np.ndarray:
        """Map uniforms in [0,1) to slab scales."""
        if self.kind == "bounded":
            return self.v_max * u
        raw = -np.log1p(-u) / self.rate
        return np.minimum(raw, self.scale_high)

    def params(self) -> dict:
        if self.kind == "bounded":
            return {"v_max": self.v_max}
        return {"rate": self.rate}


@dataclass(frozen=True)
class EnvironmentSpec:
    dimension: int = 1
    slab_count: int = 8
    cell_size: float = 1.0
    amplitude_law: AmplitudeLaw = field(default_factory=lambda: AmplitudeLaw.bounded(1.0))
    coupling_range: tuple[float, float] = (1.0, 1.0)
    master_seed: int = 0
    nu_coupling: float = 1.0

    def validate(self) -> None:
        if self.dimension not in (1, 2):
            raise ValidationError(f"dimension must be 1 or 2, got {self.dimension}")
        if self.slab_count < 1:
            raise ValidationError("slab_count must be a positive integer")
        if not (self.cell_size > 0.0):
            raise ValidationError("cell_size must be positive")
        self.amplitude_law.validate()
        a_min, a_max = self.coupling_range
        if not (0.0 < a_min <= a_max):
            raise ValidationError(
                f"coupling range must satisfy 0 < a_min <= a_max, got {self.coupling_range}"
            )
        if not (0 <= int(self.master_seed) < 2**64):
            raise ValidationError("master_seed must fit in 64 bits")
        if not (self.nu_coupling >= 1.0):
            raise ValidationError("nu_coupling must be >= 1")


def _cubic_bump(frac: np.ndarray) -> np.ndarray:
    """C^1 bump on [0,1]: 0 at both ends with zero slope, 1 at the middle.

    Two cubic smoothstep halves glued at 1/2; the tensor product over
    coordinates is used in d >= 2.
    """
    w = 2.0 * np.minimum(frac, 1.0 - frac)
    return w * w * (3.0 - 2.0 * w)


class Environment:
    """Realization of an EnvironmentSpec.  Evaluation only, no state."""

    slab_constant = True

    def __init__(self, spec: EnvironmentSpec):
        spec.validate()
        self.spec = spec
        n = spec.slab_count
        seed = np.uint64(spec.master_seed)
        slabs = np.arange(n, dtype=np.int64)
        u_scale = unit_uniform(counter_hash(seed, slabs, 0, _CH_SCALE))
        self.slab_scale = spec.amplitude_law.draw_scales(u_scale)
        # one uniform lattice shift per slab and coordinate
        dims = np.arange(spec.dimension, dtype=np.int64)
        self.slab_shift = unit_uniform(
            counter_hash(seed, slabs[:, None], dims[None, :], _CH_SHIFT)
        )
        self.nu_values = 1.0 + spec.nu_coupling * self.slab_scale
        self._nu_prefix = np.concatenate([[0.0], np.cumsum(self.nu_values)])
        a_min, a_max = spec.coupling_range
        self._a_mid = 0.5 * (a_min + a_max)
        self._seed = seed

    # -- slab bookkeeping -------------------------------------------------

    def slab_of(self, t: float) -> int:
        n = self.spec.slab_count
        if not (0.0 <= t <= n):
            raise ValidationError(f"time {t} outside the environment horizon [0, {n}]")
        return min(int(math.floor(t)), n - 1)

    def nu_at(self, t: float) -> float:
        """Envelope value nu_t; constant on each slab, always >= 1."""
        return float(self.nu_values[self.slab_of(t)])

    def nu_integral(self, s: float, t: float) -> float:
        """Exact integral of nu over [s, t] (piecewise-constant quadrature)."""
        if not (0.0 <= s <= t <= self.spec.slab_count):
            raise ValidationError(
                f"integration range [{s}, {t}] outside [0, {self.spec.slab_count}]"
            )
        return self._nu_prefix_at(t) - self._nu_prefix_at(s)

    def _nu_prefix_at(self, t: float) -> float:
        j = min(int(math.floor(t)), self.spec.slab_count - 1)
        return float(self._nu_prefix[j] + (t - j) * self.nu_values[j])

    def nu_max(self, t_hi: float | None = None) -> float:
        """Largest slab envelope over [0, t_hi] (whole horizon by default)."""
        j_hi = self.spec.slab_count if t_hi is None else self.slab_of(t_hi) + 1
        return float(self.nu_values[:j_hi].max())

    # -- field evaluation -------------------------------------------------

    def sample_fields(self, x, t: float):
        """Coupling a(x,t) and potential V(x,t) at positions x, time t.

        d=1: x is a scalar or any-shape array of positions.
        d=2: x has a trailing axis of length 2.
        """
        spec = self.spec
        j = self.slab_of(t)
        x = np.asarray(x, dtype=np.float64)
        if spec.dimension == 1:
            coords = x[..., None]
        else:
            if x.shape[-1:] != (2,):
                raise ValidationError("d=2 environment expects positions with a trailing axis of length 2")
            coords = x
        scaled = coords / spec.cell_size - self.slab_shift[j]
        cell = np.floor(scaled).astype(np.int64)
        frac = scaled - cell
        bump = np.prod(_cubic_bump(frac), axis=-1)

        if spec.dimension == 1:
            h_amp = counter_hash(self._seed, j, cell[..., 0], _CH_AMP)
            h_coup = counter_hash(self._seed, j, cell[..., 0], _CH_COUP)
        else:
            h_amp = counter_hash(self._seed, j, cell[..., 0], cell[..., 1], _CH_AMP)
            h_coup = counter_hash(self._seed, j, cell[..., 0], cell[..., 1], _CH_COUP)
        unit_amp = 2.0 * unit_uniform(h_amp) - 1.0
        a_min, a_max = spec.coupling_range
        a_cell = a_min + (a_max - a_min) * unit_uniform(h_coup)

        potential = self.slab_scale[j] * unit_amp * bump
        coupling = self._a_mid + (a_cell - self._a_mid) * bump
        return coupling, potential

    # -- misc -------------------------------------------------------------

    @property
    def dimension(self) -> int:
        return self.spec.dimension

    @property
    def slab_count(self) -> int:
        return self.spec.slab_count

    def scale_high(self) -> float:
        return self.spec.amplitude_law.scale_high

    def describe(self) -> dict:
        return spec_to_dict(self.spec)


class AnalyticEnvironment:
    """Deterministic stand-in environment built from callables.

    Used for closed-form checks (flat medium, periodic potentials).  The
    caller supplies a constant envelope value nu >= 1 + sup|V| valid on
    every slab.
    """

    slab_constant = False

    def __init__(
        self,
        a_fn: Callable[[np.ndarray, float], np.ndarray] | None = None,
        v_fn: Callable[[np.ndarray, float], np.ndarray] | None = None,
        nu_value: float = 1.0,
        slab_count: int = 8,
        dimension: int = 1,
        label: str = "analytic",
    ):
        if not (nu_value >= 1.0):
            raise ValidationError("nu_value must be >= 1")
        if dimension not in (1, 2):
            raise ValidationError("dimension must be 1 or 2")
        if slab_count < 1:
            raise ValidationError("slab_count must be positive")
        self.a_fn = a_fn
        self.v_fn = v_fn
        self.nu_value = float(nu_value)
        self._slab_count = int(slab_count)
        self._dimension = int(dimension)
        self.label = label
        self.coupling_range = (1.0, 1.0) if a_fn is None else None

    @property
    def dimension(self) -> int:
        return self._dimension

    @property
    def slab_count(self) -> int:
        return self._slab_count

    def slab_of(self, t: float) -> int:
        if not (0.0 <= t <= self._slab_count):
            raise ValidationError(f"time {t} outside the environment horizon [0, {self._slab_count}]")
        return min(int(math.floor(t)), self._slab_count - 1)

    def nu_at(self, t: float) -> float:
        self.slab_of(t)
        return self.nu_value

    def nu_integral(self, s: float, t: float) -> float:
        if not (0.0 <= s <= t <= self._slab_count):
            raise ValidationError(f"integration range [{s}, {t}] outside [0, {self._slab_count}]")
        return self.nu_value * (t - s)

    def nu_max(self, t_hi: float | None = None) -> float:
        return self.nu_value

    def scale_high(self) -> float:
        return self.nu_value - 1.0

    def sample_fields(self, x, t: float):
        self.slab_of(t)
        x = np.asarray(x, dtype=np.float64)
        base_shape = x.shape if self._dimension == 1 else x.shape[:-1]
        a = np.ones(base_shape) if self.a_fn is None else np.asarray(self.a_fn(x, t), dtype=np.float64)
        v = np.zeros(base_shape) if self.v_fn is None else np.asarray(self.v_fn(x, t), dtype=np.float64)
        return np.broadcast_to(a, base_shape).copy(), np.broadcast_to(v, base_shape).copy()

    def describe(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": "analytic",
            "label": self.label,
            "d": self._dimension,
            "slabs": self._slab_count,
            "nu": self.nu_value,
        }


# -- module-level operations ----------------------------------------------


def make_environment(spec: EnvironmentSpec) -> Environment:
    """Validate a spec and realize it.  Pure: same spec, same fields."""
    return Environment(spec)


def free_environment(slab_count: int = 8, dimension: int = 1, master_seed: int = 0) -> Environment:
    """The flat medium a = 1, V = 0, nu = 1 (zero-amplitude law)."""
    return Environment(
        EnvironmentSpec(
            dimension=dimension,
            slab_count=slab_count,
            amplitude_law=AmplitudeLaw.bounded(0.0),
            coupling_range=(1.0, 1.0),
            master_seed=master_seed,
        )
    )


def periodic_cos_environment(slab_count: int = 8, amplitude: float = 1.0) -> AnalyticEnvironment:
    """Time-independent V(x) = amplitude * cos(2 pi x), a = 1, d = 1."""

    def v_fn(x, t):
        return amplitude * np.cos(2.0 * np.pi * np.asarray(x))

    return AnalyticEnvironment(
        v_fn=v_fn,
        nu_value=1.0 + abs(amplitude),
        slab_count=slab_count,
        label=f"cos(2*pi*x) amplitude {amplitude}",
    )


def sample_fields(env, x, t: float):
    return env.sample_fields(x, t)


def nu_at(env, t: float) -> float:
    return env.nu_at(t)


def nu_integral(env, s: float, t: float) -> float:
    return env.nu_integral(s, t)


# -- serialization ---------------------------------------------------------


def spec_to_dict(spec: EnvironmentSpec) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "d": spec.dimension,
        "slabs": spec.slab_count,
        "cell": spec.cell_size,
        "law": spec.amplitude_law.kind,
        "law_params": spec.amplitude_law.params(),
        "a_range": [spec.coupling_range[0], spec.coupling_range[1]],
        "seed": int(spec.master_seed),
        "nu_coupling": spec.nu_coupling,
    }


def spec_to_json(spec: EnvironmentSpec) -> str:
    return json.dumps(spec_to_dict(spec), sort_keys=True)


def spec_from_dict(data: dict) -> EnvironmentSpec:
    try:
        law_kind = data["law"]
        params = data.get("law_params", {})
        if law_kind == "bounded":
            law = AmplitudeLaw.bounded(params.get("v_max", 0.0))
        elif law_kind == "exponential_tail":
            law = AmplitudeLaw.exponential_tail(params.get("rate", 1.0))
        else:
            raise ValidationError(f"unknown amplitude law {law_kind!r}")
        a_range = data.get("a_range", [1.0, 1.0])
        spec = EnvironmentSpec(
            dimension=int(data.get("d", 1)),
            slab_count=int(data["slabs"]),
            cell_size=float(data.get("cell", 1.0)),
            amplitude_law=law,
            coupling_range=(float(a_range[0]), float(a_range[1])),
            master_seed=int(data.get("seed", 0)),
            nu_coupling=float(data.get("nu_coupling", 1.0)),
        )
    except (KeyError, TypeError, IndexError) as exc:
        raise ValidationError(f"malformed environment spec: {exc}") from exc
    spec.validate()
    return spec


def spec_from_json(text: str) -> EnvironmentSpec:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"environment spec is not valid JSON: {exc}") from exc
    return spec_from_dict(data)
