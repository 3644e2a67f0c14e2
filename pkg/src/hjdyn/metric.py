"""Travel-cost metrics and viscosity solutions on space-time grids.

The point-to-point cost

    m(x1, t1; x2, t2) = inf over paths g from (x1,t1) to (x2,t2) of
                        int L(g(s), s, g'(s)) ds

is computed by dynamic programming over a uniform grid: one Bellman step
per time slice,

    m_{k+1}(x) = min_{|x - y| <= v_cap dt} [ m_k(y)
                   + dt * L((x+y)/2, t_k + dt/2, (x-y)/dt) ],

with midpoint quadrature for the running cost.  Because 1/dt is an
integer and solves start on the dt lattice, no Bellman step straddles a
slab boundary, so the in-step field is constant in time and the midpoint
rule commits no time-quadrature error at all.  Unreachable nodes carry
+inf (the genuine IEEE infinity, which propagates correctly through
min/plus); ties in the minimizer break toward the smallest predecessor
index, which keeps backtraces reproducible.

Initial-value solves (hopf_lax_solve) run the same recursion from finite
initial data; the metric front is the special case of a single zero at
the origin against an infinite barrier.  scaled_solution evaluates the
rescaled field eps * u(x/eps, t/eps).

Quadrature slack: grid paths snap a straight line to node sequences and
sample fields at segment midpoints, so discrete values can sit a little
off the continuum inequalities they are compared with.  Every solve

declares tau_quad(T) = 2 (dx + dt) (1 + T) (1 + S + |c_shift|), with S
the environment amplitude ceiling, and the sandwich/monotonicity checks
use that slack.  The time-direction lower bound needs none: the rest
move costs exactly dt * L(x, ., 0) <= integral of the envelope, so
m(x, t) <= m(x, s) + int_s^t nu holds at machine precision.
"""
from __future__ import annotations

from dataclasses import dataclass
import math
import struct

import numpy as np

from .errors import NumericError, ValidationError
from .lagrangian import ConvexProfile, LagrangianModel

__all__ = [
    "GridSpec",
    "MetricField",
    "SolutionField",
    "OptimalPath",
    "grid_for",
    "solve_metric_front",
    "reverse_metric_front",
    "point_metric",
    "backtrace_path",
    "hopf_lax_solve",
    "scaled_solution",
    "effective_hopf_lax",
    "sandwich_margins",
    "time_monotonicity_margin",
    "write_field_binary",
    "read_field_binary",
    "field_csv_slice",
]

_BP_NONE = np.int16(-1)


@dataclass(frozen=True)
class GridSpec:
    dx: float
    dt: float
    half_width: float
    v_cap: float
    dimension: int = 1

    def validate(self) -> None:
        if self.dimension not in (1, 2):
            raise ValidationError(f"dimension must be 1 or 2, got {self.dimension}")
        if not (self.dx > 0.0):
            raise ValidationError("dx must be positive")
        if not (0.0 < self.dt <= 1.0):
            raise ValidationError("dt must lie in (0, 1]")
        k = round(1.0 / self.dt)
        if k < 1 or abs(k * self.dt - 1.0) > 1e-9:
            raise ValidationError(f"1/dt must be an integer, got dt={self.dt}")
        if not (self.half_width > 0.0):
            raise ValidationError("half_width must be positive")
        if self.v_cap * self.dt + 1e-12 < self.dx:
            raise ValidationError(
                f"v_cap dt >= dx required (one cell per step): v_cap={self.v_cap}, dt={self.dt}, dx={self.dx}"
            )

    @property
    def steps_per_unit(self) -> int:
        return round(1.0 / self.dt)

    @property
    def n_axis(self) -> int:
        return 2 * round(self.half_width / self.dx) + 1

    def axis(self) -> np.ndarray:
        n = self.n_axis
        return (np.arange(n) - (n - 1) // 2) * self.dx

    @property
    def window(self) -> int:
        """Largest admissible index offset per step."""
        return int(math.floor(self.v_cap * self.dt / self.dx + 1e-9))

    def offsets(self) -> list:
        w = self.window
        if self.dimension == 1:
            return list(range(-w, w + 1))
        out = []
        r2 = (self.v_cap * self.dt / self.dx) ** 2 + 1e-9
        for jy in range(-w, w + 1):
            for jx in range(-w, w + 1):
                if jy * jy + jx * jx <= r2:
                    out.append((jy, jx))
        return out


def grid_for(
    env,
    model: LagrangianModel,
    target_radius: float,
    duration: float,
    dx: float,
    dt: float,
    v_cap: float | None = None,
) -> GridSpec:
    """Grid whose domain contains the full speed cone of the solve.

    Padding rule: half_width >= |target| + v_cap * duration, so no
    admissible path can interact with the domain boundary.
    """
    if v_cap is None:
        v_cap = model.default_v_cap(env)
    need = target_radius + v_cap * duration
    half_width = math.ceil(need / dx - 1e-9) * dx
    spec = GridSpec(dx=dx, dt=dt, half_width=half_width, v_cap=v_cap, dimension=env.dimension)
    spec.validate()
    return spec


# -- solve bookkeeping -----------------------------------------------------


class MetricField:
    """Layered values of a front solve plus whatever was kept per layer."""

    kind = "metric"

    def __init__(
        self,
        grid: GridSpec,
        env,
        model: LagrangianModel,
        t0: float,
        t_end: float,
        origin_index,
        origin,
        layer_values: dict,
        values: np.ndarray | None,
        backptr: np.ndarray | None,
    ):
        self.grid = grid
        self.env = env
        self.model = model
        self.t0 = float(t0)
        self.t_end = float(t_end)
        self.steps = round((t_end - t0) / grid.dt)
        self.times = t0 + np.arange(self.steps + 1) * grid.dt
        self.origin_index = origin_index
        self.origin = origin
        self.layer_values = layer_values
        self.values = values
        self.backptr = backptr
        self.offsets = grid.offsets()
        s_hi = float(env.scale_high())
        self._tau_coeff = 2.0 * (grid.dx + grid.dt) * (1.0 + s_hi + abs(model.c_shift))

    # layer / node addressing

    def time_index(self, t: float) -> int:
        k = round((t - self.t0) / self.grid.dt)
        if not (0 <= k <= self.steps) or abs(self.t0 + k * self.grid.dt - t) > 1e-9:
            raise ValidationError(f"time {t} is not on the stored grid [{self.t0}, {self.t_end}]")
        return k

    def node_of(self, x):
        ax = self.grid.axis()
        n = self.grid.n_axis
        if self.grid.dimension == 1:
            xv = float(np.asarray(x).reshape(()))
            i = round((xv - ax[0]) / self.grid.dx)
            if not (0 <= i < n):
                raise ValidationError(f"position {x} outside the grid domain")
            return i
        xv = np.asarray(x, dtype=np.float64).reshape(2)
        iy = round((xv[0] - ax[0]) / self.grid.dx)
        ix = round((xv[1] - ax[0]) / self.grid.dx)
        if not (0 <= iy < n and 0 <= ix < n):
            raise ValidationError(f"position {x} outside the grid domain")
        return (iy, ix)

    def layer(self, k: int) -> np.ndarray:
        if self.values is not None:
            return self.values[k]
        if k in self.layer_values:
            return self.layer_values[k]
        raise ValidationError(f"layer {k} was not kept by this solve")

    def value_at(self, x, t: float) -> float:
        k = self.time_index(t)
        idx = self.node_of(x)
        return float(self.layer(k)[idx])

    def position_of(self, index):
        ax = self.grid.axis()
        if self.grid.dimension == 1:
            return float(ax[index])
        return np.array([ax[index[0]], ax[index[1]]])

    # declared quadrature slack

    def tau_quad(self, elapsed: float | None = None) -> float:
        if elapsed is None:
            elapsed = self.t_end - self.t0
        return self._tau_coeff * (1.0 + elapsed)

    def uncontaminated_radius(self, t: float) -> float:
        """Radius inside which boundary truncation cannot have leaked."""
        return self.grid.half_width - self.grid.v_cap * (t - self.t0)


class SolutionField(MetricField):
    """Initial-value solve; carries the initial data and its Lipschitz bound."""

    kind = "solution"

    def __init__(self, *args, initial=None, lipschitz=None, scale=1.0, macro_axis=None, macro_times=None):
        super().__init__(*args)
        self.initial = initial
        self.lipschitz = lipschitz
        self.scale = scale
        self._macro_axis = macro_axis
        self._macro_times = macro_times

    @property
    def macro_axis(self) -> np.ndarray:
        return self.grid.axis() if self._macro_axis is None else self._macro_axis

    @property
    def macro_times(self) -> np.ndarray:
        return self.times if self._macro_times is None else self._macro_times


@dataclass
class OptimalPath:
    times: np.ndarray
    positions: np.ndarray
    cost: float
    endpoint_value: float
    max_speed: float

    def speed_profile(self, dt: float) -> np.ndarray:
        d = np.diff(self.positions, axis=0)
        if d.ndim == 1:
            return np.abs(d) / dt
        return np.linalg.norm(d, axis=1) / dt


# -- the Bellman sweep -----------------------------------------------------


def _normalize_keep(keep_values, steps: int, grid: GridSpec, t0: float):
    if keep_values == "all":
        return None
    keep = {steps}
    if keep_values is not None:
        for t in keep_values:
            k = round((float(t) - t0) / grid.dt)
            if not (0 <= k <= steps) or abs(t0 + k * grid.dt - float(t)) > 1e-9:
                raise ValidationError(f"keep time {t} is not on the solve's time grid")
            keep.add(k)
    return keep


def _slab_fields(env, model, half_pos, slab: int, t_mid: float, dt: float):
    t_rep = slab + 0.5 if getattr(env, "slab_constant", False) else t_mid
    a, pot = env.sample_fields(half_pos, t_rep)
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(pot))):
        raise NumericError(f"non-finite field sample in slab {slab}")
    return a, dt * (pot + model.c_shift)


def _sweep(env, model, grid, init, t0, t_end, keep_values, keep_backptr, reverse=False):
    """Run the recursion and return (layer_values, values, backptr).

    reverse=True computes costs-to-go toward a terminal condition: the
    same sweep on the time-mirrored field, stepping from t_end down.
    """
    grid.validate()
    model.validate()
    d = grid.dimension
    steps = round((t_end - t0) / grid.dt)
    if steps < 1 or abs(t0 + steps * grid.dt - t_end) > 1e-9:
        raise ValidationError(f"horizon [{t0}, {t_end}] must span a whole number of steps")
    if t0 < -1e-9 or t_end > env.slab_count + 1e-9:
        raise ValidationError(
            f"solve horizon [{t0}, {t_end}] exceeds the environment horizon [0, {env.slab_count}]"
        )
    k0 = round(t0 / grid.dt)
    if abs(k0 * grid.dt - t0) > 1e-9:
        raise ValidationError(f"start time {t0} must sit on the dt lattice")

    spu = grid.steps_per_unit
    n = grid.n_axis
    ax = grid.axis()
    offsets = grid.offsets()
    q = model.q
    dt, dx = grid.dt, grid.dx

    if d == 1:
        half = ax[0] + np.arange(2 * n - 1) * (dx / 2.0)
        shape = (n,)
    else:
        hp = ax[0] + np.arange(2 * n - 1) * (dx / 2.0)
        half = np.stack(np.meshgrid(hp, hp, indexing="ij"), axis=-1)
        shape = (n, n)

    kin_dt = []
    for off in offsets:
        spd = (abs(off) if d == 1 else math.hypot(*off)) * dx / dt
        kin_dt.append(dt * spd**q / q)

    keep = _normalize_keep(keep_values, steps, grid, t0)
    layer_values: dict[int, np.ndarray] = {}
    values = np.empty((steps + 1,) + shape) if keep is None else None
    backptr = np.full((steps + 1,) + shape, _BP_NONE, dtype=np.int16) if keep_backptr else None

    cur = np.asarray(init, dtype=np.float64).copy()
    if cur.shape != shape:
        raise ValidationError(f"initial data shape {cur.shape} does not match the grid {shape}")
    if values is not None:
        values[0] = cur
    elif keep is not None and 0 in keep:
        layer_values[0] = cur.copy()

    cache_slab = None
    cache_fields = None
    for k in range(steps):
        # global step index measured from absolute time zero
        gk = (k0 + k) if not reverse else (k0 + steps - 1 - k)
        slab = gk // spu
        t_mid = (gk + 0.5) * dt
        if slab != cache_slab:
            cache_fields = _slab_fields(env, model, half, slab, t_mid, dt)
            cache_slab = slab
        a_half, pot_half = cache_fields

        best = np.full(shape, np.inf)
        bpk = np.full(shape, _BP_NONE, dtype=np.int16) if keep_backptr else None
        if d == 1:
            for oi, j in enumerate(offsets):
                lo = max(0, -j)
                hi = n - max(0, j)
                if lo >= hi:
                    continue
                sub = (
                    cur[lo + j : hi + j]
                    + kin_dt[oi] * a_half[2 * lo + j : 2 * hi + j - 1 : 2]
                    + pot_half[2 * lo + j : 2 * hi + j - 1 : 2]
                )
                seg = best[lo:hi]
                better = sub < seg
                best[lo:hi] = np.where(better, sub, seg)
                if keep_backptr:
                    bseg = bpk[lo:hi]
                    bpk[lo:hi] = np.where(better, np.int16(oi), bseg)
        else:
            for oi, (jy, jx) in enumerate(offsets):
                loy, hiy = max(0, -jy), n - max(0, jy)
                lox, hix = max(0, -jx), n - max(0, jx)
                if loy >= hiy or lox >= hix:
                    continue
                sub = (
                    cur[loy + jy : hiy + jy, lox + jx : hix + jx]
                    + kin_dt[oi]
                    * a_half[2 * loy + jy : 2 * hiy + jy - 1 : 2, 2 * lox + jx : 2 * hix + jx - 1 : 2]
                    + pot_half[2 * loy + jy : 2 * hiy + jy - 1 : 2, 2 * lox + jx : 2 * hix + jx - 1 : 2]
                )
                seg = best[loy:hiy, lox:hix]
                better = sub < seg
                best[loy:hiy, lox:hix] = np.where(better, sub, seg)
                if keep_backptr:
                    bseg = bpk[loy:hiy, lox:hix]
                    bpk[loy:hiy, lox:hix] = np.where(better, np.int16(oi), bseg)

        cur = best
        if values is not None:
            values[k + 1] = cur
        elif keep is not None and (k + 1) in keep:
            layer_values[k + 1] = cur.copy()
        if keep_backptr:
            backptr[k + 1] = bpk

    return layer_values, values, backptr


def solve_metric_front(
    env,
    model: LagrangianModel,
    grid: GridSpec,
    origin,
    t_end: float,
    t0: float = 0.0,
    keep_values="all",
    keep_backptr: bool = True,
) -> MetricField:
    """m(origin, t0; x, t) for every grid node x and step time t <= t_end."""
    grid.validate()
    if env.dimension != grid.dimension:
        raise ValidationError("grid and environment dimensions disagree")
    ax = grid.axis()
    n = grid.n_axis
    if grid.dimension == 1:
        x0 = float(np.asarray(origin).reshape(()))
        i0 = round((x0 - ax[0]) / grid.dx)
        if not (0 <= i0 < n):
            raise ValidationError(f"origin {origin} outside the grid")
        origin_index = i0
        snapped = float(ax[i0])
        reach = abs(snapped)
    else:
        xv = np.asarray(origin, dtype=np.float64).reshape(2)
        iy = round((xv[0] - ax[0]) / grid.dx)
        ix = round((xv[1] - ax[0]) / grid.dx)
        if not (0 <= iy < n and 0 <= ix < n):
            raise ValidationError(f"origin {origin} outside the grid")
        origin_index = (iy, ix)
        snapped = np.array([ax[iy], ax[ix]])
        reach = float(np.max(np.abs(snapped)))
    if reach + grid.v_cap * (t_end - t0) > grid.half_width + 1e-6 * grid.dx:
        raise ValidationError(
            "grid padding violated: half_width must cover |origin| + v_cap * horizon"
        )

    init = np.full((n,) * grid.dimension, np.inf)
    init[origin_index if grid.dimension == 1 else tuple(origin_index)] = 0.0
    layer_values, values, backptr = _sweep(
        env, model, grid, init, t0, t_end, keep_values, keep_backptr
    )
    return MetricField(
        grid, env, model, t0, t_end, origin_index, snapped, layer_values, values, backptr
    )


def reverse_metric_front(
    env,
    model: LagrangianModel,
    grid: GridSpec,
    endpoint,
    t_end: float,
    t0: float = 0.0,
    keep_values="all",
) -> MetricField:
    """m(y, s; endpoint, t_end) for grid nodes y and times s in [t0, t_end].

    Same sweep run backward in time; layer k of the result corresponds to
    s = t0 + k dt, so layer indexing matches the forward convention.
    """
    grid.validate()
    ax = grid.axis()
    n = grid.n_axis
    if grid.dimension != 1:
        raise ValidationError("reverse fronts are provided in d=1 only")
    x1 = float(np.asarray(endpoint).reshape(()))
    i1 = round((x1 - ax[0]) / grid.dx)
    if not (0 <= i1 < n):
        raise ValidationError(f"endpoint {endpoint} outside the grid")
    if abs(ax[i1]) + grid.v_cap * (t_end - t0) > grid.half_width + 1e-6 * grid.dx:
        raise ValidationError(
            "grid padding violated: half_width must cover |endpoint| + v_cap * horizon"
        )
    init = np.full((n,), np.inf)
    init[i1] = 0.0
    layer_values, values, backptr = _sweep(
        env, model, grid, init, t0, t_end, keep_values, keep_backptr=False, reverse=True
    )
    # mirror layer indexing back to forward time
    if values is not None:
        values = values[::-1].copy()
    layer_values = {round((t_end - t0) / grid.dt) - k: v for k, v in layer_values.items()}
    return MetricField(grid, env, model, t0, t_end, i1, float(ax[i1]), layer_values, values, None)


def point_metric(env, model: LagrangianModel, grid: GridSpec, p1, p2) -> float:
    """Travel cost between two space-time points (zero when they agree)."""
    x1, t1 = p1
    x2, t2 = p2
    same_x = np.allclose(np.asarray(x1, dtype=float), np.asarray(x2, dtype=float))
    if same_x and abs(t1 - t2) <= 1e-12:
        return 0.0
    if not (t2 > t1):
        raise ValidationError(f"need t2 > t1, got t1={t1}, t2={t2}")
    field = solve_metric_front(
        env, model, grid, x1, t_end=t2, t0=t1, keep_values=[t2], keep_backptr=False
    )
    return field.value_at(x2, t2)


# -- path reconstruction ---------------------------------------------------


def backtrace_path(field: MetricField, x, t: float) -> OptimalPath:
    """Walk the stored minimizing predecessors from (x, t) to the start."""
    if field.backptr is None:
        raise ValidationError("this solve kept no backpointers")
    k_end = field.time_index(t)
    idx = field.node_of(x)
    endpoint_value = float(field.layer(k_end)[idx] if field.values is not None else field.layer(k_end)[idx])
    if not math.isfinite(endpoint_value):
        raise ValidationError(f"no admissible path reaches {x} at time {t}")

    d = field.grid.dimension
    ax = field.grid.axis()
    indices = [idx]
    for k in range(k_end, 0, -1):
        bp = int(field.backptr[k][indices[-1]] if d == 1 else field.backptr[k][tuple(indices[-1])])
        if bp < 0:
            raise NumericError(f"broken backpointer chain at layer {k}")
        off = field.offsets[bp]
        if d == 1:
            indices.append(indices[-1] + off)
        else:
            iy, ix = indices[-1]
            indices.append((iy + off[0], ix + off[1]))
    indices.reverse()

    if d == 1:
        positions = np.array([ax[i] for i in indices])
    else:
        positions = np.array([[ax[i], ax[j]] for i, j in indices])
    times = field.t0 + np.arange(k_end + 1) * field.grid.dt

    cost = _requadrature(field, times, positions)
    scale = max(1.0, abs(endpoint_value))
    if abs(cost - endpoint_value) > 1e-9 * scale:
        raise NumericError(
            f"path re-quadrature {cost} disagrees with field value {endpoint_value}"
        )
    diffs = np.diff(positions, axis=0)
    speeds = (np.abs(diffs) if d == 1 else np.linalg.norm(diffs, axis=1)) / field.grid.dt
    max_speed = float(speeds.max()) if len(speeds) else 0.0
    if max_speed > field.grid.v_cap + 1e-9:
        raise NumericError("reconstructed path exceeds the speed cap")
    return OptimalPath(
        times=times,
        positions=positions,
        cost=float(cost),
        endpoint_value=endpoint_value,
        max_speed=max_speed,
    )


def _requadrature(field: MetricField, times: np.ndarray, positions: np.ndarray) -> float:
    """Re-integrate the running cost along a stored path, slab by slab."""
    env, model, grid = field.env, field.model, field.grid
    dt = grid.dt
    q = model.q
    d = grid.dimension
    k0 = round(field.t0 / dt)
    spu = grid.steps_per_unit
    nsteps = len(times) - 1
    if nsteps == 0:
        return 0.0
    mids = 0.5 * (positions[:-1] + positions[1:])
    vels = (positions[1:] - positions[:-1]) / dt
    speeds = np.abs(vels) if d == 1 else np.linalg.norm(vels, axis=1)
    gks = k0 + np.arange(nsteps)
    slabs = gks // spu
    total = 0.0
    if getattr(env, "slab_constant", False):
        order = np.arange(nsteps)
        contrib = np.empty(nsteps)
        for slab in np.unique(slabs):
            sel = order[slabs == slab]
            a, pot = env.sample_fields(mids[sel], float(slab) + 0.5)
            contrib[sel] = dt * (a * speeds[sel] ** q / q + pot + model.c_shift)
        # accumulate in step order, matching the sweep's own summation
        for c in contrib:
            total += float(c)
    else:
        for i in range(nsteps):
            t_mid = (gks[i] + 0.5) * dt
            a, pot = env.sample_fields(mids[i], t_mid)
            total += float(dt * (a * speeds[i] ** q / q + pot + model.c_shift))
    return total


# -- initial-value solves --------------------------------------------------


def _initial_array(g, grid: GridSpec):
    ax = grid.axis()
    if callable(g):
        if grid.dimension == 1:
            vals = np.asarray(g(ax), dtype=np.float64)
        else:
            yy, xx = np.meshgrid(ax, ax, indexing="ij")
            vals = np.asarray(g(np.stack([yy, xx], axis=-1)), dtype=np.float64)
    else:
        vals = np.asarray(g, dtype=np.float64).copy()
    if vals.shape != (grid.n_axis,) * grid.dimension:
        raise ValidationError(f"initial data shape {vals.shape} does not match the grid")
    if np.any(np.isnan(vals)) or np.any(np.isneginf(vals)):
        raise ValidationError("initial data must not contain NaN or -inf")
    return vals


def _lipschitz_of(vals: np.ndarray, dx: float) -> float:
    finite = np.isfinite(vals)
    if finite.sum() < 2:
        return 0.0
    lip = 0.0
    for axis in range(vals.ndim):
        a = np.moveaxis(vals, axis, 0)
        f = np.moveaxis(finite, axis, 0)
        both = f[:-1] & f[1:]
        if both.any():
            lip = max(lip, float(np.max(np.abs(a[1:][both] - a[:-1][both])) / dx))
    return lip


def hopf_lax_solve(
    env,
    model: LagrangianModel,
    grid: GridSpec,
    g,
    t_end: float,
    t0: float = 0.0,
    keep_values="all",
    keep_backptr: bool = False,
) -> SolutionField:
    """u(x, t) = inf_y [ g(y) + m(y, t0; x, t) ] via the same sweep.

    g may be a callable on positions or an array on the grid axis; +inf
    entries act as barriers, -inf and NaN are rejected.  The recorded
    Lipschitz bound is the largest finite neighbor difference over dx.
    """
    init = _initial_array(g, grid)
    lip = _lipschitz_of(init, grid.dx)
    layer_values, values, backptr = _sweep(
        env, model, grid, init, t0, t_end, keep_values, keep_backptr
    )
    return SolutionField(
        grid,
        env,
        model,
        t0,
        t_end,
        None,
        None,
        layer_values,
        values,
        backptr,
        initial=init,
        lipschitz=lip,
    )


def scaled_solution(
    env,
    model: LagrangianModel,
    epsilon: float,
    grid: GridSpec,
    g,
    t_end: float,
    keep_values="all",
) -> SolutionField:
    """eps * u(x/eps, t/eps) with initial data u(., 0) = g(eps .)/eps.

    ``grid`` is the microscopic grid the sweep runs on; the returned
    field exposes macroscopic coordinates eps * axis and times
    eps * (k dt).  With epsilon = 1 this is exactly hopf_lax_solve.
    """
    if not (0.0 < epsilon <= 1.0):
        raise ValidationError(f"epsilon must lie in (0, 1], got {epsilon}")
    micro_t_end = t_end / epsilon
    if micro_t_end > env.slab_count + 1e-9:
        raise ValidationError(
            f"microscopic horizon {micro_t_end} exceeds the environment slab count {env.slab_count}"
        )
    if abs(round(micro_t_end / grid.dt) * grid.dt - micro_t_end) > 1e-9:
        raise ValidationError("t_end / epsilon must sit on the microscopic dt lattice")
    if not callable(g):
        raise ValidationError("scaled_solution expects callable macroscopic initial data")

    def g_micro(y):
        return np.asarray(g(epsilon * np.asarray(y)), dtype=np.float64) / epsilon

    micro_keep = "all" if keep_values == "all" else [float(t) / epsilon for t in keep_values]
    field = hopf_lax_solve(env, model, grid, g_micro, t_end=micro_t_end, keep_values=micro_keep)
    # rescale stored layers in place
    if field.values is not None:
        field.values *= epsilon
    for k in field.layer_values:
        field.layer_values[k] = field.layer_values[k] * epsilon
    field.initial = field.initial * epsilon
    field.scale = epsilon
    field._macro_axis = epsilon * grid.axis()
    field._macro_times = epsilon * field.times
    return field


def effective_hopf_lax(profile: ConvexProfile, g, x, t: float):
    """Deterministic limit solve: min over the sampled velocity grid of
    g(x - t v) + t * profile(v)."""
    if not (t > 0.0):
        raise ValidationError("effective_hopf_lax needs t > 0")
    if not callable(g):
        raise ValidationError("g must be callable")
    x_arr = np.asarray(x, dtype=np.float64)
    scalar = x_arr.ndim == 0
    pts = np.atleast_1d(x_arr)
    cand = np.asarray(g(pts[:, None] - t * profile.grid[None, :])) + t * profile.values[None, :]
    out = np.min(cand, axis=1)
    return float(out[0]) if scalar else out


# -- structural checks -----------------------------------------------------


def sandwich_margins(field: MetricField) -> dict:
    """Worst violation of the two-sided power bounds over finite nodes.

    upper: m <= N1 |x - x0|^q / T^(q-1) + int nu + tau_quad
    lower: m >= |x - x0|^q / (N1 T^(q-1)) - 3 int nu - tau_quad
    Margins are reported clipped at zero (0 means the bound held).
    """
    env, model, grid = field.env, field.model, field.grid
    if field.origin is None:
        raise ValidationError("sandwich_margins applies to metric fronts")
    ax = grid.axis()
    if grid.dimension == 1:
        dist = np.abs(ax - field.origin)
    else:
        yy, xx = np.meshgrid(ax, ax, indexing="ij")
        dist = np.hypot(yy - field.origin[0], xx - field.origin[1])
    q, N1 = model.q, model.N1
    up = 0.0
    low = 0.0
    for k in range(1, field.steps + 1):
        try:
            vals = field.layer(k)
        except ValidationError:
            continue
        elapsed = k * grid.dt
        nu_int = model.nu_bound_integral(env, field.t0, field.t0 + elapsed)
        tau = field.tau_quad(elapsed)
        finite = np.isfinite(vals)
        if not finite.any():
            continue
        power = dist[finite] ** q / elapsed ** (q - 1.0)
        v = vals[finite]
        up = max(up, float(np.max(v - (N1 * power + nu_int + tau))))
        low = max(low, float(np.max((power / N1 - 3.0 * nu_int - tau) - v)))
    return {
        "upper_margin": max(up, 0.0),
        "lower_margin": max(low, 0.0),
        "tau_quad": field.tau_quad(),
    }


def time_monotonicity_margin(field: MetricField, tol: float = 1e-9) -> float:
    """Worst violation of m(x, t) <= m(x, s) + int_s^t nu over layer pairs.

    Exact for the sweep (the rest move is always admissible), so any
    positive return beyond float noise is a bug.
    """
    env, model = field.env, field.model
    worst = -np.inf
    prev = None
    prev_k = None
    for k in range(field.steps + 1):
        try:
            vals = field.layer(k)
        except ValidationError:
            continue
        if prev is not None:
            nu_int = model.nu_bound_integral(
                env, field.t0 + prev_k * field.grid.dt, field.t0 + k * field.grid.dt
            )
            both = np.isfinite(prev)
            if both.any():
                gap = vals[both] - (prev[both] + nu_int)
                worst = max(worst, float(np.max(gap)))
        prev, prev_k = vals, k
    return max(worst, 0.0) if math.isfinite(worst) else 0.0


# -- serialization ---------------------------------------------------------

_MAGIC = b"HJFR"
_BIN_VERSION = 1


def write_field_binary(field: MetricField, path: str) -> None:
    """Header (grid + horizon) then the kept layers as row-major doubles."""
    if field.values is None:
        raise ValidationError("binary export needs a full-value solve")
    g = field.grid
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(
            struct.pack(
                "<iiii", _BIN_VERSION, g.dimension, g.n_axis, field.steps + 1
            )
        )
        fh.write(struct.pack("<ddddd", g.dx, g.dt, g.half_width, g.v_cap, field.t0))
        field.values.astype("<f8").tofile(fh)


def read_field_binary(path: str) -> dict:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ValidationError(f"{path} is not a field file")
        version, dim, n, layers = struct.unpack("<iiii", fh.read(16))
        if version != _BIN_VERSION:
            raise ValidationError(f"unsupported field file version {version}")
        dx, dt, half_width, v_cap, t0 = struct.unpack("<ddddd", fh.read(40))
        payload = np.fromfile(fh, dtype="<f8")
    shape = (layers,) + (n,) * dim
    if payload.size != np.prod(shape):
        raise ValidationError("field file payload truncated")
    return {
        "dimension": dim,
        "dx": dx,
        "dt": dt,
        "half_width": half_width,
        "v_cap": v_cap,
        "t0": t0,
        "values": payload.reshape(shape),
    }


def field_csv_slice(field: MetricField, t: float) -> str:
    """One time slice as x(,y),value rows; infinities print as inf."""
    k = field.time_index(t)
    vals = field.layer(k)
    ax = field.grid.axis()
    lines = []
    if field.grid.dimension == 1:
        lines.append("x,value")
        for x, v in zip(ax, vals):
            lines.append(f"{x!r},{v!r}")
    else:
        lines.append("y,x,value")
        for iy in range(len(ax)):
            for ix in range(len(ax)):
                lines.append(f"{ax[iy]!r},{ax[ix]!r},{vals[iy, ix]!r}")
    return "\n".join(lines) + "\n"
