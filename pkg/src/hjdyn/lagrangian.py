"""Lagrangian models over an environment, and the calculus around them.

The running cost is

    L(x, t, v) = a(x,t) * |v|^q / q + V(x,t) + c_shift

with q > 1 and fields from an environment.  The model carries the growth
constant N1 > 1 for the two-sided power-growth envelope

    |v|^q / N1 - nu_t <= L(x,t,v) <= N1 |v|^q + nu_t

and a modulus-of-continuity envelope in (x,t,v) whose non-velocity part
is absorbed by nu_s + nu_t.  verify_a2 samples both inequalities.

A constant shift of L moves every travel cost linearly in time and is
absorbed into the envelope, so the model's effective envelope is the
environment's nu plus |c_shift|.

Exact inequalities force one compromise: with velocities unbounded, any
genuine spatial variation of the coupling a(x,t) would overwhelm the
nu terms at large |v|.  The envelope check therefore samples velocities
from the box actually visited by minimizing paths (the coercivity cap),
and a model bound to an environment must keep the coupling spread small
enough for that box: (a_max - a_min) * v_box^q <= 2q.

This module also hosts the scalar growth envelopes used by the rate
diagnostics (phi, psi, phi_rate, Lambda, A_xts in the operations
vocabulary) and the bootstrap exponent sequences a_n, b_n, l_n.
"""
from __future__ import annotations

from dataclasses import dataclass
import io
import math

import numpy as np

from .errors import NumericError, ValidationError

__all__ = [
    "LagrangianModel",
    "A2Report",
    "ConvexProfile",
    "SlowVaryingParams",
    "ExponentTable",
    "eval_lagrangian",
    "verify_a2",
    "legendre",
    "legendre_profile",
    "slow_varying",
    "phi",
    "psi",
    "phi_rate",
    "lambda_weight",
    "sup_window_average",
    "exponent_sequences",
    "closed_form_b",
    "closed_form_l",
    "l_growth_bound",
    "legendre_argmax",
    "normalizing_shift",
]


@dataclass(frozen=True)
class LagrangianModel:
    q: float
    N1: float
    c_shift: float = 0.0

    def validate(self) -> None:
        if not (self.q > 1.0):
            raise ValidationError(f"q must exceed 1, got {self.q}")
        if not (self.N1 > 1.0):
            raise ValidationError(f"N1 must exceed 1, got {self.N1}")
        if not math.isfinite(self.c_shift):
            raise ValidationError("c_shift must be finite")

    @staticmethod
    def for_environment(env, q: float, c_shift: float = 0.0, N1: float | None = None) -> "LagrangianModel":
        """Build a model whose N1 makes the power-growth envelope exact.

        The kinetic term a|v|^q/q sits inside [|v|^q/N1, N1|v|^q] iff
        N1 >= q/a_min and N1 >= a_max/q.
        """
        rng = getattr(env, "coupling_range", None)
        if rng is None:
            rng = getattr(env.spec, "coupling_range", None) if hasattr(env, "spec") else None
        if N1 is None:
            if rng is None:
                raise ValidationError("environment has no coupling range; pass N1 explicitly")
            a_min, a_max = rng
            N1 = max(q / a_min, a_max / q, 1.0 + 1e-9)
        model = LagrangianModel(q=float(q), N1=float(N1), c_shift=float(c_shift))
        model.validate()
        if rng is not None:
            a_min, a_max = rng
            spread = a_max - a_min
            box = model.velocity_box(env)
            if spread * box**q > 2.0 * q + 1e-12:
                raise ValidationError(
                    "coupling spread too large for the envelope check: "
                    f"(a_max - a_min) * v_box^q = {spread * box ** q:.3g} exceeds 2q = {2 * q:.3g}"
                )
        return model

    # -- envelope plumbing -------------------------------------------------

    def nu_bound(self, env, t: float) -> float:
        """Effective envelope: environment nu plus the absorbed shift."""
        return env.nu_at(t) + abs(self.c_shift)

    def nu_bound_integral(self, env, s: float, t: float) -> float:
        return env.nu_integral(s, t) + abs(self.c_shift) * (t - s)

    def nu_bound_max(self, env, t_hi: float | None = None) -> float:
        return env.nu_max(t_hi) + abs(self.c_shift)

    def velocity_box(self, env) -> float:
        """Half-width of the velocity box minimizers can visit.

        A path beating the stay-put competitor keeps its average speed
        below (4 N1 nu)^(1/q); the worst slab envelope makes the box
        horizon-wide.
        """
        return (4.0 * self.N1 * self.nu_bound_max(env)) ** (1.0 / self.q)

    def default_v_cap(self, env) -> float:
        """Speed cap handed to grid builders: the box with a 2x margin."""
        return 2.0 * self.velocity_box(env)

    def frak_speed(self, env, t: float) -> float:
        """Average-speed cap for minimizers over [0, t]: (4 N1 avg nu)^(1/q)."""
        if not (t > 0):
            raise ValidationError("frak_speed needs t > 0")
        return (4.0 * self.N1 * self.nu_bound_integral(env, 0.0, t) / t) ** (1.0 / self.q)

    def kinetic(self, speed):
        return np.asarray(speed, dtype=np.float64) ** self.q / self.q

    def modulus_constant(self, env) -> float:
        """Velocity-difference coefficient of the continuity envelope.

        | |v|^q - |w|^q | <= q * max^(q-1) * |v - w| gives a_max as a
        valid constant for the kinetic part.
        """
        rng = getattr(env, "coupling_range", None)
        if rng is None and hasattr(env, "spec"):
            rng = env.spec.coupling_range
        a_max = rng[1] if rng is not None else self.N1 * self.q
        return float(a_max)


def normalizing_shift(env) -> float:
    """Shift making every large-time average cost at velocity zero >= 1.

    inf_x L(x,t,0) >= -scale_high + c_shift, so c_shift = 1 + scale_high
    guarantees the limit of m(0,t)/t is at least 1.
    """
    return 1.0 + float(env.scale_high())


def _speed(v, dimension: int) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if dimension == 1:
        return np.abs(v)
    return np.linalg.norm(v, axis=-1)


def eval_lagrangian(model: LagrangianModel, env, x, t: float, v):
    """L(x, t, v) evaluated pointwise (x and v broadcast together)."""
    model.validate()
    a, pot = env.sample_fields(x, t)
    speed = _speed(v, env.dimension)
    return a * speed**model.q / model.q + pot + model.c_shift


# -- envelope verification -------------------------------------------------


@dataclass
class A2Report:
    n_samples: int
    growth_margin: float
    modulus_margin: float
    best_modulus_constant: float
    model_modulus_constant: float
    velocity_box: float
    passed: bool
    notes: str = ""

    def summary(self) -> str:
        state = "pass" if self.passed else "FAIL"
        return (
            f"envelope check: {state}  growth margin {self.growth_margin:.3g}  "
            f"modulus margin {self.modulus_margin:.3g}  "
            f"best modulus constant {self.best_modulus_constant:.3g} "
            f"(model uses {self.model_modulus_constant:.3g})"
        )


_A2_TOL = 1e-9


def verify_a2(
    model: LagrangianModel,
    env,
    n_samples: int = 10_000,
    seed: int = 0,
    v_box: float | None = None,
    nu_fn=None,
) -> A2Report:
    """Sample the two-sided growth and modulus envelopes.

    Velocities are drawn from the coercivity box (or the caller's
    ``v_box``); nu_fn overrides the envelope values, which is how the
    degenerate-envelope failure mode is exercised.
    """
    model.validate()
    if n_samples < 2:
        raise ValidationError("n_samples must be at least 2")
    d = env.dimension
    q = model.q
    horizon = float(env.slab_count)
    box = model.velocity_box(env) if v_box is None else float(v_box)
    if nu_fn is None:
        nu_fn = lambda t: model.nu_bound(env, t)  # noqa: E731

    rng = np.random.default_rng(seed)
    n = int(n_samples)
    cell = getattr(getattr(env, "spec", None), "cell_size", 1.0)
    window = 8.0 * max(cell, 1.0)

    def draw(count):
        xs = rng.uniform(-window, window, size=(count, d))
        ts = rng.uniform(0.0, horizon, size=count)
        vs = rng.uniform(-box, box, size=(count, d))
        return xs, ts, vs

    slab_constant = getattr(env, "slab_constant", False)

    def lag(xs, ts, vs):
        out = np.empty(len(ts))
        speed = np.linalg.norm(vs, axis=1)
        if slab_constant:
            # fields do not move inside a slab, so batch per slab
            slabs = np.minimum(np.floor(ts).astype(np.int64), env.slab_count - 1)
            for j in np.unique(slabs):
                sel = slabs == j
                x = xs[sel, 0] if d == 1 else xs[sel]
                a, pot = env.sample_fields(x, float(j) + 0.5)
                out[sel] = a * speed[sel] ** q / q + pot + model.c_shift
        else:
            for i, t in enumerate(ts):
                x = xs[i, 0] if d == 1 else xs[i]
                v = vs[i, 0] if d == 1 else vs[i]
                out[i] = float(eval_lagrangian(model, env, x, float(t), v))
        return out

    xs, ts, vs = draw(n)
    speeds = np.linalg.norm(vs, axis=1)
    values = lag(xs, ts, vs)
    if not np.all(np.isfinite(values)):
        raise NumericError("non-finite Lagrangian sample during envelope check")
    nus = np.array([nu_fn(float(t)) for t in ts])
    lo = speeds**q / model.N1 - nus
    hi = model.N1 * speeds**q + nus
    growth_margin = max(float(np.max(lo - values)), float(np.max(values - hi)), 0.0)

    # pairs for the modulus side; half share the velocity to stress the
    # pure space-time variation
    m = n // 2
    xs2, ts2, vs2 = draw(m)
    vs2[m // 2 :] = vs[: m - m // 2]
    values2 = lag(xs2, ts2, vs2)
    nus2 = np.array([nu_fn(float(t)) for t in ts2])
    dv = np.linalg.norm(vs[:m] - vs2, axis=1)
    sp1, sp2 = speeds[:m], np.linalg.norm(vs2, axis=1)
    weight = dv * (sp1 ** (q - 1.0) + sp2 ** (q - 1.0) + 1.0)
    lhs = np.abs(values[:m] - values2)
    resid = lhs - nus[:m] - nus2
    c_model = model.modulus_constant(env)
    modulus_margin = max(float(np.max(resid - c_model * weight)), 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(weight > 0, resid / np.where(weight > 0, weight, 1.0), -np.inf)
    best_c = max(float(np.max(ratios)), 0.0)

    passed = growth_margin <= _A2_TOL and modulus_margin <= _A2_TOL
    notes = "" if passed else "envelope violated beyond tolerance"
    return A2Report(
        n_samples=n,
        growth_margin=growth_margin,
        modulus_margin=modulus_margin,
        best_modulus_constant=best_c,
        model_modulus_constant=c_model,
        velocity_box=box,
        passed=passed,
        notes=notes,
    )


# -- discrete Legendre transform -------------------------------------------


@dataclass
class ConvexProfile:
    """Sampled scalar profile on a strictly increasing grid."""

    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.grid.ndim != 1 or self.grid.shape != self.values.shape:
            raise ValidationError("profile grid and values must be 1-d arrays of equal length")
        if len(self.grid) < 2:
            raise ValidationError("profile needs at least two points")
        if not np.all(np.diff(self.grid) > 0):
            raise ValidationError("profile grid must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("profile values must be finite")

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("v,value\n")
        for v, val in zip(self.grid, self.values):
            buf.write(f"{v!r},{val!r}\n")
        return buf.getvalue()

    @staticmethod
    def from_csv(text: str) -> "ConvexProfile":
        grid, values = [], []
        for line in text.strip().splitlines():
            line = line.strip()
            if not line or line.lower().startswith("v,"):
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise ValidationError(f"profile CSV rows need two columns, got {line!r}")
            grid.append(float(parts[0]))
            values.append(float(parts[1]))
        return ConvexProfile(np.array(grid), np.array(values))

    def __call__(self, v):
        """Linear interpolation inside the grid; values clamp outside."""
        return np.interp(v, self.grid, self.values)


def legendre(profile: ConvexProfile, p):
    """Exact discrete conjugate sup_v (p v - profile(v)) over the grid."""
    p_arr = np.asarray(p, dtype=np.float64)
    obj = p_arr[..., None] * profile.grid - profile.values
    out = np.max(obj, axis=-1)
    return float(out) if np.isscalar(p) or p_arr.ndim == 0 else out


def legendre_argmax(profile: ConvexProfile, p: float) -> int:
    obj = float(p) * profile.grid - profile.values
    return int(np.argmax(obj))


def legendre_profile(profile: ConvexProfile, p_grid) -> ConvexProfile:
    p_grid = np.asarray(p_grid, dtype=np.float64)
    return ConvexProfile(p_grid, legendre(profile, p_grid))


# -- slow-varying growth envelopes -----------------------------------------


@dataclass(frozen=True)
class SlowVaryingParams:
    c1: float = 1.0
    q: float = 2.0

    def validate(self) -> None:
        if not (self.c1 >= 0.0):
            raise ValidationError("c1 must be nonnegative")
        if not (self.q > 1.0):
            raise ValidationError("q must exceed 1")

    @property
    def root(self) -> float:
        return 1.0 / min(2.0, self.q)


def phi(s: float, params: SlowVaryingParams) -> float:
    """exp(c1 (log s)^(1/(2 min q))) for s >= 1, extended by 1 below."""
    params.validate()
    if not (s > 0.0):
        raise ValidationError("phi needs s > 0")
    if s <= 1.0:
        return 1.0
    return math.exp(params.c1 * math.log(s) ** params.root)


def psi(t: float, params: SlowVaryingParams) -> float:
    params.validate()
    if not (t > math.e):
        raise ValidationError("psi needs t > e")
    return math.exp(4.0 * params.c1 * math.log(math.log(t)) * math.log(t) ** params.root)


def phi_rate(t: float, params: SlowVaryingParams) -> float:
    """The averaging-rate envelope; equals psi(t) squared."""
    params.validate()
    if not (t > math.e):
        raise ValidationError("phi_rate needs t > e")
    return math.exp(8.0 * params.c1 * math.log(math.log(t)) * math.log(t) ** params.root)


def lambda_weight(x, t: float, q: float) -> float:
    """Directional weight (|x|^q/t^q + 1) log(|x|/t + 2)."""
    if not (t > 0.0):
        raise ValidationError("lambda_weight needs t > 0")
    r = float(np.linalg.norm(np.atleast_1d(np.asarray(x, dtype=np.float64)))) / t
    return (r**q + 1.0) * math.log(r + 2.0)


def sup_window_average(env, x, t: float, s: float, q: float) -> float:
    """|x|^q/t^q + sup over w in [0, s] of the average of nu on [w, t].

    The average is piecewise-monotone in w between slab boundaries, so
    the sup is attained at w = 0, w = s, or an integer in between.
    """
    if not (0.0 <= s < t):
        raise ValidationError("sup_window_average needs 0 <= s < t")
    r = float(np.linalg.norm(np.atleast_1d(np.asarray(x, dtype=np.float64)))) / t
    candidates = [0.0, s]
    candidates.extend(float(j) for j in range(1, int(math.ceil(s))) if j < s)
    best = max(env.nu_integral(w, t) / (t - w) for w in candidates)
    return r**q + best


def slow_varying(kind: str, args: tuple, params: SlowVaryingParams, env=None) -> float:
    """Dispatcher mirroring the operations vocabulary.

    kinds: phi(s), psi(t), phi_rate(t), Lambda(x, t), A_xts(x, t, s).
    A_xts needs the environment for its nu averages.
    """
    if kind == "phi":
        return phi(args[0], params)
    if kind == "psi":
        return psi(args[0], params)
    if kind == "phi_rate":
        return phi_rate(args[0], params)
    if kind == "Lambda":
        return lambda_weight(args[0], args[1], params.q)
    if kind == "A_xts":
        if env is None:
            raise ValidationError("A_xts needs an environment")
        return sup_window_average(env, args[0], args[1], args[2], params.q)
    raise ValidationError(f"unknown slow-varying kind {kind!r}")


# -- bootstrap exponent sequences ------------------------------------------


@dataclass
class ExponentTable:
    q: float
    n: np.ndarray
    a: np.ndarray
    b: np.ndarray
    g_of_a: np.ndarray
    f_of_a: np.ndarray
    l: np.ndarray

    def row(self, k: int) -> dict:
        return {
            "n": int(self.n[k]),
            "a": float(self.a[k]),
            "b": float(self.b[k]),
            "g_of_a": float(self.g_of_a[k]),
            "f_of_a": float(self.f_of_a[k]),
            "l": float(self.l[k]),
        }


def _f_map(a: float, q: float) -> float:
    return a / ((1.0 - a) * (q - 1.0) * q + q) + (q - 1.0) / q


def _g_map(a: float, q: float) -> float:
    return a / ((1.0 - a) * (q - 1.0) + 1.0)


def closed_form_b(q: float, n) -> np.ndarray:
    n = np.asarray(n, dtype=np.float64)
    return 1.0 / (n * (q - 1.0) + q)


def closed_form_l(q: float, n: int) -> float:
    """(q-1) * prod_{m=1..n} (m + q') / m with q' the conjugate exponent."""
    qp = q / (q - 1.0)
    out = q - 1.0
    for m in range(1, n + 1):
        out *= (m + qp) / m
    return out


def l_growth_bound(q: float, n: int) -> float:
    qp = q / (q - 1.0)
    return (q - 1.0) * math.exp(qp) * float(n) ** qp


def exponent_sequences(q: float, n_max: int) -> ExponentTable:
    """Iterate the bootstrap exponent maps from a_0 = 1/q'.

    a_{n+1} = f(a_n) climbs toward 1; b_n = 1 - a_n; l_n divides out the
    accumulated g factors from l_0 = q - 1.
    """
    if not (q > 1.0):
        raise ValidationError("q must exceed 1")
    if n_max < 0:
        raise ValidationError("n_max must be nonnegative")
    count = n_max + 1
    a = np.empty(count)
    g_vals = np.empty(count)
    f_vals = np.empty(count)
    l_vals = np.empty(count)
    a[0] = (q - 1.0) / q  # 1/q'
    l_vals[0] = q - 1.0
    for k in range(count):
        g_vals[k] = _g_map(a[k], q)
        f_vals[k] = _f_map(a[k], q)
        if k + 1 < count:
            a[k + 1] = f_vals[k]
            l_vals[k + 1] = l_vals[k] / g_vals[k]
    return ExponentTable(
        q=q,
        n=np.arange(count),
        a=a,
        b=1.0 - a,
        g_of_a=g_vals,
        f_of_a=f_vals,
        l=l_vals,
    )
