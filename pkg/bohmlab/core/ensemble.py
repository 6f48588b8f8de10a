"""Quantum-equilibrium sampling, guidance-law trajectory integration and equivariance checks.

Trajectories are integrated in batches with classical RK4 against a
time-indexed velocity provider built from propagator snapshots. Every
trajectory draws from its own counter-based random stream, so results do not
depend on how the ensemble is split across worker threads.
"""

from __future__ import annotations

import bisect
import logging
import math
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import product
from typing import TYPE_CHECKING, Any

import numpy as np
from scipy import stats

from ..protocol import (
    ConfigError,
    DegenerateStateError,
    GateResult,
    InitRule,
    IntegrationError,
    TimeMismatchError,
    below,
)
from .guidance import NODE_THRESHOLD, VelocityField, velocity_field
from .wavefield import DensityField, GridSpec, WaveField, density, marginal

if TYPE_CHECKING:
    from ..scenarios.base import Scenario, ScenarioRegistry, Setup

logger = logging.getLogger(__name__)

KS_COEFFICIENT = 1.63  # asymptotic KS critical value at the 1% level
CHUNK_SIZE = 256
TIME_RTOL = 1e-9


def ks_threshold(n: int) -> float:
    return KS_COEFFICIENT / math.sqrt(n)


def trajectory_stream(seed: int, index: int) -> np.random.Generator:
    """Independent Philox stream keyed by (seed, trajectory index)."""
    key = (int(seed) % 2**64) | (int(index) << 64)
    return np.random.Generator(np.random.Philox(key=key))


def _uniforms(seed: int, n: int, width: int) -> np.ndarray:
    return np.array([trajectory_stream(seed, i).random(width) for i in range(n)])


# ── Trajectories ──


@dataclass(frozen=True, eq=False)
class Trajectory:
    """One configuration-space path.

    `step_errors[k]` is the largest RK4-versus-midpoint increment difference
    over the steps between samples k and k+1.
    """

    index: int
    times: np.ndarray
    positions: np.ndarray
    unwrapped: np.ndarray
    node_encounters: int = 0
    clamp_events: int = 0
    step_errors: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def start(self) -> np.ndarray:
        return self.unwrapped[0]

    @property
    def final(self) -> np.ndarray:
        return self.positions[-1]

    def sample_index(self, t: float) -> int:
        k = int(np.searchsorted(self.times, t - TIME_RTOL * max(1.0, abs(t))))
        if k < len(self.times) and math.isclose(self.times[k], t, rel_tol=TIME_RTOL, abs_tol=TIME_RTOL):
            return k
        raise TimeMismatchError(f"time {t:.6g} is not a sample time of trajectory {self.index}")

    def position_at(self, t: float, *, wrapped: bool = True) -> np.ndarray:
        k = self.sample_index(t)
        return self.positions[k] if wrapped else self.unwrapped[k]


@dataclass
class TrajectoryEnsemble:
    trajectories: list[Trajectory]
    seed: int
    scenario_id: str
    snapshots: list[WaveField] = field(default_factory=list)
    regularized_points: int = 0

    def __len__(self) -> int:
        return len(self.trajectories)

    @property
    def times(self) -> np.ndarray:
        return self.trajectories[0].times if self.trajectories else np.zeros(0)

    @property
    def clamp_events(self) -> int:
        return sum(t.clamp_events for t in self.trajectories)

    @property
    def node_encounters(self) -> int:
        return sum(t.node_encounters for t in self.trajectories)

    def positions_at(self, t: float, *, wrapped: bool = True) -> np.ndarray:
        """(n, dims) positions of every trajectory at sample time t."""
        if not self.trajectories:
            return np.zeros((0, 0))
        k = self.trajectories[0].sample_index(t)
        src = [tr.positions if wrapped else tr.unwrapped for tr in self.trajectories]
        return np.array([p[k] for p in src])

    def starts(self) -> np.ndarray:
        return np.array([tr.start for tr in self.trajectories])


# ── Velocity provider ──


class VelocityProvider:
    """Time-indexed velocity evaluator, linear in t between snapshot fields.

    Requests slightly outside the covered interval are held at the nearest end.
    """

    def __init__(self, fields: Sequence[VelocityField]):
        if not fields:
            raise ConfigError("velocity provider needs at least one field", field_name="snapshots")
        ordered = sorted(fields, key=lambda f: f.time_tag)
        for a, b in zip(ordered, ordered[1:]):
            a.grid.require_same(b.grid)
            if b.time_tag <= a.time_tag:
                raise ConfigError("snapshot times must be distinct", field_name="snapshots")
        self.fields = ordered
        self.times = [f.time_tag for f in ordered]

    @classmethod
    def from_snapshots(
        cls, snapshots: Sequence[WaveField], node_threshold: float = NODE_THRESHOLD
    ) -> VelocityProvider:
        return cls([velocity_field(s, node_threshold) for s in snapshots])

    @property
    def grid(self) -> GridSpec:
        return self.fields[0].grid

    @property
    def regularized(self) -> int:
        return sum(f.regularized for f in self.fields)

    def _bracket(self, t: float) -> tuple[int, int, float]:
        j = bisect.bisect_right(self.times, t) - 1
        if j < 0:
            return 0, 0, 0.0
        if j >= len(self.times) - 1:
            return j, j, 0.0
        w = (t - self.times[j]) / (self.times[j + 1] - self.times[j])
        return j, j + 1, w

    def __call__(self, t: float, points: np.ndarray) -> np.ndarray:
        lo, hi, w = self._bracket(t)
        v = self.fields[lo].at(points)
        if w > 0.0:
            v = (1.0 - w) * v + w * self.fields[hi].at(points)
        return v

    def near_node(self, t: float, points: np.ndarray) -> np.ndarray:
        lo, hi, w = self._bracket(t)
        near = self.fields[lo].near_node(points)
        if w > 0.0:
            near = near | self.fields[hi].near_node(points)
        return near


FieldProvider = Callable[[float, np.ndarray], np.ndarray]


# ── Sampling ──


def _cell_corners(shape: tuple[int, ...]) -> list[tuple[int, ...]]:
    return list(product((0, 1), repeat=len(shape)))


def _invert_linear(a: np.ndarray, b: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Inverse CDF on [0, 1] of the linear density a + (b - a) s."""
    m = 0.5 * (a + b)
    denom = a + np.sqrt(np.maximum(a * a + 2.0 * q * m * (b - a), 0.0))
    safe = denom > 0.0
    u = np.where(safe, 2.0 * q * m / np.where(safe, denom, 1.0), q)
    return np.clip(u, 0.0, 1.0)


def sample_density(d: DensityField, uniforms: np.ndarray) -> np.ndarray:
    """Map (n, dims + 1) uniforms to points of the periodic piecewise-multilinear density.

    The first uniform picks a cell by its mean corner value; the rest invert
    the cell's marginal along axis 0, then the conditional along axis 1, and so on.
    """
    grid = d.grid
    values = d.values
    offsets = _cell_corners(grid.shape)
    weights = sum(np.roll(values, tuple(-o for o in off), axis=tuple(range(grid.dims))) for off in offsets)
    cdf = np.cumsum(weights.ravel())
    total = cdf[-1]
    if not total > 0.0:
        raise DegenerateStateError("cannot sample from a zero-mass density")

    n = uniforms.shape[0]
    flat = np.searchsorted(cdf, uniforms[:, 0] * total, side="right")
    flat = np.minimum(flat, grid.size - 1)
    cell = np.array(np.unravel_index(flat, grid.shape)).T  # (n, dims)

    corner_shape = (n,) + (2,) * grid.dims
    corners = np.empty(corner_shape)
    shape = np.array(grid.shape)
    for off in offsets:
        idx = (cell + np.array(off)) % shape
        corners[(slice(None),) + off] = values[tuple(idx.T)]

    local = np.empty((n, grid.dims))
    for axis in range(grid.dims):
        a = corners[:, 0].reshape(n, -1).mean(axis=1)
        b = corners[:, 1].reshape(n, -1).mean(axis=1)
        u = _invert_linear(a, b, uniforms[:, axis + 1])
        local[:, axis] = u
        w = u.reshape((n,) + (1,) * (corners.ndim - 2))
        corners = (1.0 - w) * corners[:, 0] + w * corners[:, 1]

    return grid.wrap(grid.lower + (cell + local) * np.array(grid.spacings))


def sample_equilibrium(d: DensityField, n: int, seed: int) -> np.ndarray:
    """n i.i.d. configurations distributed as d, deterministic given seed."""
    if n < 1:
        raise ConfigError(f"ensemble size must be >= 1, got {n}", field_name="n")
    return sample_density(d, _uniforms(seed, n, d.grid.dims + 1))


def sample_uniform_in_slits(
    grid: GridSpec,
    slits: Sequence[tuple[float, float]],
    n: int,
    seed: int,
    *,
    slit_axis: int = 1,
    plane: Sequence[float] = (0.0,),
) -> np.ndarray:
    """Uniform over the union of the slit intervals along slit_axis; other axes fixed at `plane`."""
    if n < 1:
        raise ConfigError(f"ensemble size must be >= 1, got {n}", field_name="n")
    if not slits:
        raise ConfigError("uniform_in_slits needs at least one slit interval", field_name="slits")
    lengths = np.array([hi - lo for lo, hi in slits], dtype=float)
    if np.any(lengths <= 0):
        raise ConfigError("slit intervals must have positive width", field_name="slits")
    edges = np.concatenate([[0.0], np.cumsum(lengths)])
    s = _uniforms(seed, n, 1)[:, 0] * edges[-1]
    which = np.minimum(np.searchsorted(edges, s, side="right") - 1, len(slits) - 1)
    lows = np.array([lo for lo, _ in slits])
    points = np.empty((n, grid.dims))
    others = [a for a in range(grid.dims) if a != slit_axis]
    for a, q in zip(others, plane):
        points[:, a] = q
    points[:, slit_axis] = lows[which] + (s - edges[which])
    return points


def initial_points(setup: Setup, n: int, seed: int, init: InitRule | str | None = None) -> np.ndarray:
    rule = InitRule(init) if init is not None else setup.init
    if rule is InitRule.EQUILIBRIUM:
        return sample_equilibrium(density(setup.initial), n, seed)
    slits = setup.params.get("slits")
    if not slits:
        raise ConfigError(f"scenario '{setup.scenario}' defines no slits", field_name="init")
    return sample_uniform_in_slits(
        setup.grid,
        slits,
        n,
        seed,
        slit_axis=int(setup.params.get("slit_axis", 1)),
        plane=tuple(setup.params.get("slit_plane", (0.0,))),
    )


# ── Integration ──


@dataclass
class _Batch:
    times: list[float]
    unwrapped: list[np.ndarray]
    errors: list[np.ndarray]
    node_encounters: np.ndarray
    clamp_events: np.ndarray


def _n_steps(t_final: float, dt: float) -> int:
    k = round(t_final / dt)
    if abs(k * dt - t_final) > TIME_RTOL * max(1.0, abs(t_final)):
        logger.warning("t_final %.6g is not a multiple of dt_traj=%.6g; rounded to %.6g", t_final, dt, k * dt)
    return int(k)


def _capped(v: np.ndarray, v_max: float, clamps: np.ndarray) -> np.ndarray:
    speed = np.linalg.norm(v, axis=1)
    over = speed > v_max
    if np.any(over):
        clamps += over
        v = v.copy()
        v[over] *= (v_max / speed[over])[:, None]
    return v


def _rk4(
    provider: FieldProvider, q: np.ndarray, t: float, h: float, v_max: float, clamps: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """RK4 increment and |RK4 - midpoint| error indicator for a batch of points."""
    k1 = _capped(provider(t, q), v_max, clamps)
    k2 = _capped(provider(t + 0.5 * h, q + 0.5 * h * k1), v_max, clamps)
    k3 = _capped(provider(t + 0.5 * h, q + 0.5 * h * k2), v_max, clamps)
    k4 = _capped(provider(t + h, q + h * k3), v_max, clamps)
    inc = (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return inc, np.linalg.norm(inc - h * k2, axis=1)


def _integrate_batch(
    starts: np.ndarray,
    provider: VelocityProvider | FieldProvider,
    grid: GridSpec,
    t0: float,
    n_steps: int,
    dt: float,
    record_every: int,
) -> _Batch:
    n = starts.shape[0]
    v_max = grid.diameter / (10.0 * dt)
    near_node = getattr(provider, "near_node", None)
    q = starts.astype(float).copy()
    batch = _Batch(
        times=[t0],
        unwrapped=[q.copy()],
        errors=[],
        node_encounters=np.zeros(n, dtype=int),
        clamp_events=np.zeros(n, dtype=int),
    )
    err_since = np.zeros(n)
    for k in range(n_steps):
        t = t0 + k * dt
        inc, err = _rk4(provider, q, t, dt, v_max, batch.clamp_events)
        if near_node is not None:
            near = near_node(t, q)
            if np.any(near):
                # two half steps for points in a cell touching a regularized node
                sub = q[near]
                c = np.zeros(sub.shape[0], dtype=int)
                inc1, e1 = _rk4(provider, sub, t, 0.5 * dt, v_max, c)
                inc2, e2 = _rk4(provider, sub + inc1, t + 0.5 * dt, 0.5 * dt, v_max, c)
                inc[near] = inc1 + inc2
                err[near] = e1 + e2
                batch.clamp_events[near] += c
                batch.node_encounters += near
        bad = ~np.all(np.isfinite(inc), axis=1)
        if np.any(bad):
            raise _BatchFailure(batch, int(np.argmax(bad)), t)
        q = q + inc
        err_since = np.maximum(err_since, err)
        if (k + 1) % record_every == 0 or k + 1 == n_steps:
            batch.times.append(t0 + (k + 1) * dt)
            batch.unwrapped.append(q.copy())
            batch.errors.append(err_since)
            err_since = np.zeros(n)
    return batch


class _BatchFailure(Exception):
    def __init__(self, batch: _Batch, row: int, t: float):
        self.batch = batch
        self.row = row
        self.t = t
        super().__init__(f"non-finite velocity at t={t:.6g}")


def _trajectories(batch: _Batch, grid: GridSpec, first_index: int) -> list[Trajectory]:
    times = np.array(batch.times)
    paths = np.stack(batch.unwrapped, axis=1)  # (n, m, dims)
    errors = np.stack(batch.errors, axis=1) if batch.errors else np.zeros((paths.shape[0], 0))
    return [
        Trajectory(
            index=first_index + i,
            times=times,
            positions=grid.wrap(paths[i]),
            unwrapped=paths[i],
            node_encounters=int(batch.node_encounters[i]),
            clamp_events=int(batch.clamp_events[i]),
            step_errors=errors[i],
        )
        for i in range(paths.shape[0])
    ]


def _check_starts(starts: np.ndarray, grid: GridSpec) -> None:
    if starts.ndim != 2 or starts.shape[1] != grid.dims:
        raise ConfigError(f"start points must have shape (n, {grid.dims})", field_name="start")
    if not np.all(np.isfinite(starts)):
        raise ConfigError("start points must be finite", field_name="start")
    lo, hi = grid.lower, grid.lower + grid.lengths
    if np.any(starts < lo) or np.any(starts > hi):
        raise ConfigError("start point lies outside the domain", field_name="start")


def integrate_ensemble(
    starts: np.ndarray,
    provider: VelocityProvider,
    t_final: float,
    dt_traj: float,
    *,
    t0: float = 0.0,
    record_every: int = 1,
    final_only: bool = False,
    workers: int | None = None,
) -> list[Trajectory]:
    """Integrate many trajectories; chunks run on a thread pool and are joined in index order.

    With `final_only` each trajectory keeps just its start and end points.
    """
    grid = provider.grid
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    _check_starts(starts, grid)
    if not dt_traj > 0:
        raise ConfigError(f"dt_traj must be positive, got {dt_traj}", field_name="dt_traj")
    if record_every < 1:
        raise ConfigError("record_every must be >= 1", field_name="record_every")
    n_steps = _n_steps(t_final - t0, dt_traj)
    if final_only:
        record_every = max(1, n_steps)

    chunks = [(i, starts[i : i + CHUNK_SIZE]) for i in range(0, len(starts), CHUNK_SIZE)]

    def run(chunk: tuple[int, np.ndarray]) -> list[Trajectory]:
        first, block = chunk
        try:
            batch = _integrate_batch(block, provider, grid, t0, n_steps, dt_traj, record_every)
        except _BatchFailure as fail:
            partial = _trajectories(fail.batch, grid, first)[fail.row]
            raise IntegrationError(
                f"trajectory {first + fail.row}: non-finite velocity at t={fail.t:.6g}", partial=partial
            ) from None
        return _trajectories(batch, grid, first)

    if workers is not None and workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    out = [tr for part in parts for tr in part]

    clamps = sum(tr.clamp_events for tr in out)
    if clamps:
        logger.warning("Speed cap clamped %d velocity evaluations", clamps)
    logger.debug("Integrated %d trajectories over %d steps", len(out), n_steps)
    return out


def integrate_trajectory(
    start: np.ndarray,
    provider: VelocityProvider,
    t_final: float,
    dt_traj: float,
    *,
    t0: float = 0.0,
    record_every: int = 1,
    final_only: bool = False,
) -> Trajectory:
    """RK4 integration of one configuration under the guidance law."""
    return integrate_ensemble(
        np.atleast_2d(start),
        provider,
        t_final,
        dt_traj,
        t0=t0,
        record_every=record_every,
        final_only=final_only,
    )[0]


def run_ensemble(
    scenario: str | Scenario,
    n: int,
    seed: int,
    *,
    overrides: dict[str, Any] | None = None,
    init: InitRule | str | None = None,
    workers: int | None = None,
    registry: ScenarioRegistry | None = None,
    setup: Setup | None = None,
) -> TrajectoryEnsemble:
    """Sample n initial configurations per the scenario rule and integrate them on shared snapshots."""
    if setup is None:
        if isinstance(scenario, str):
            from ..scenarios import default_registry

            scenario = (registry or default_registry()).get(scenario)
        setup = scenario.setup(**(overrides or {}))
    starts = initial_points(setup, n, seed, init)
    snapshots = setup.evolve(workers=workers)
    provider = VelocityProvider.from_snapshots(snapshots)
    stride = max(1, round(setup.snapshot_spacing / setup.dt_traj))
    spacing = stride * setup.dt_traj
    if any(abs(t / spacing - round(t / spacing)) > 1e-6 for t in setup.snapshot_times):
        stride = 1
    trajectories = integrate_ensemble(
        starts, provider, setup.t_final, setup.dt_traj, record_every=stride, workers=workers
    )
    logger.info("Ensemble '%s': %d trajectories, seed %d", setup.scenario, n, seed)
    return TrajectoryEnsemble(
        trajectories=trajectories,
        seed=seed,
        scenario_id=setup.scenario,
        snapshots=snapshots,
        regularized_points=provider.regularized,
    )


# ── Equivariance ──


def marginal_cdf(d: DensityField, axis: int) -> Callable[[np.ndarray], np.ndarray]:
    """CDF of the axis marginal under the periodic piecewise-linear model used for sampling."""
    m = marginal(d, axis)
    ax = m.grid.axes[0]
    vals = np.append(m.values, m.values[0])
    h = ax.spacing
    cum = np.concatenate([[0.0], np.cumsum(0.5 * h * (vals[:-1] + vals[1:]))])
    total = cum[-1]
    if not total > 0.0:
        raise DegenerateStateError("marginal has zero mass")

    def cdf(x: np.ndarray) -> np.ndarray:
        s = (np.asarray(x, dtype=float) - ax.lo) / h
        k = np.clip(np.floor(s).astype(int), 0, ax.n - 1)
        u = np.clip(s - k, 0.0, 1.0)
        a, b = vals[k], vals[k + 1]
        return (cum[k] + h * (a * u + 0.5 * (b - a) * u * u)) / total

    return cdf


@dataclass(frozen=True)
class EquivarianceEntry:
    time: float
    distances: tuple[float, ...]

    @property
    def worst(self) -> float:
        return max(self.distances)


@dataclass
class EquivarianceReport:
    n: int
    threshold: float
    entries: list[EquivarianceEntry] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e.worst < self.threshold for e in self.entries)

    @property
    def max_distance(self) -> float:
        return max((e.worst for e in self.entries), default=0.0)

    def gates(self) -> list[GateResult]:
        return [below("equivariance_ks", self.max_distance, self.threshold, f"n={self.n}")]

    def print_summary(self) -> None:
        print(f"\n{'='*60}")
        print(f"  EQUIVARIANCE (n={self.n}, threshold {self.threshold:.4f})")
        print(f"{'='*60}")
        for e in self.entries:
            flag = "ok" if e.worst < self.threshold else "FAIL"
            ks = "  ".join(f"{d:.4f}" for d in e.distances)
            print(f"  t={e.time:8.3f}  KS {ks}  {flag}")
        print(f"{'='*60}\n")

    def to_dict(self) -> dict[str, Any]:
        return {
            "n": self.n,
            "threshold": self.threshold,
            "passed": self.passed,
            "max_distance": self.max_distance,
            "entries": [{"time": e.time, "ks": list(e.distances)} for e in self.entries],
        }


def equivariance_report(e: TrajectoryEnsemble, snapshots: Sequence[WaveField]) -> EquivarianceReport:
    """Per-axis KS distance between ensemble marginals and |psi_t|^2 marginals at each snapshot."""
    n = len(e)
    if n == 0:
        raise ConfigError("empty ensemble", field_name="n")
    report = EquivarianceReport(n=n, threshold=ks_threshold(n))
    for snap in snapshots:
        pts = e.positions_at(snap.time_tag)
        d = density(snap)
        dists = tuple(
            float(stats.kstest(pts[:, axis], marginal_cdf(d, axis)).statistic) for axis in range(d.grid.dims)
        )
        report.entries.append(EquivarianceEntry(time=snap.time_tag, distances=dists))
    if not report.passed:
        logger.warning("Equivariance gate failed: max KS %.4f >= %.4f", report.max_distance, report.threshold)
    return report


# ── Path geometry ──


def plane_crossings(e: TrajectoryEnsemble, *, axis: int = 0, plane: float = 0.0, transverse: int = 1) -> np.ndarray:
    """Transverse coordinate where each trajectory first reaches the plane q[axis] = plane (NaN if never)."""
    out = np.full(len(e), np.nan)
    for i, tr in enumerate(e.trajectories):
        s = tr.unwrapped[:, axis] - plane
        hits = np.flatnonzero((s[:-1] * s[1:] <= 0) | (s[:-1] == 0))
        if hits.size == 0:
            if s.size and s[-1] == 0:
                out[i] = tr.unwrapped[-1, transverse]
            continue
        k = hits[0]
        a, b = s[k], s[k + 1]
        w = 0.0 if a == b else a / (a - b)
        out[i] = (1 - w) * tr.unwrapped[k, transverse] + w * tr.unwrapped[k + 1, transverse]
    return out


def axis_crossings(e: TrajectoryEnsemble, *, axis: int = 1, center: float = 0.0) -> int:
    """Number of trajectories whose unwrapped coordinate changes sign about `center`."""
    count = 0
    for tr in e.trajectories:
        s = np.sign(tr.unwrapped[:, axis] - center)
        s = s[s != 0]
        if s.size and np.any(s != s[0]):
            count += 1
    return count


def ordering_violations(e: TrajectoryEnsemble, axis: int = 0) -> int:
    """Sample times at which trajectories sorted by start are no longer sorted (1D no-crossing)."""
    if not e.trajectories:
        return 0
    paths = np.array([tr.unwrapped[:, axis] for tr in e.trajectories])
    paths = paths[np.argsort(paths[:, 0], kind="stable")]
    return int(np.sum(np.any(np.diff(paths, axis=0) < 0, axis=0)))
