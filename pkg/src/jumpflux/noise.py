"""Reproducible noise generation on jump-adapted time grids.

The random inputs of one simulated path are a Brownian increment per grid
step and a finite-activity marked Poisson train on the punctured one-norm
unit ball E = {0 < |x|_1 < 1}.  Four independent Philox streams are derived
from (master seed, path index, purpose tag), so

* Brownian and Poisson sources are independent of each other,
* path i is a pure function of (master seed, i) regardless of scheduling,
* rerunning any path reproduces its noise bit-exactly.

Purpose tags: 0 = brownian, 1 = jump-count, 2 = jump-times, 3 = jump-marks.

Jump times are sampled first and inserted as grid nodes, then Brownian
increments are drawn per grid gap (variance = gap width).  Sampling instants
k*delta are tracked by their integer index k on every node; the index is
assigned while the grid is built and never recovered by floating division.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    GridMismatchError,
    SimulationConfigError,
    UnsupportedFamilyError,
    UnsupportedMeasureError,
)
from .linalg import one_norm

TAG_BROWNIAN = 0
TAG_JUMP_COUNT = 1
TAG_JUMP_TIMES = 2
TAG_JUMP_MARKS = 3

_MASK64 = (1 << 64) - 1


def stream(master_seed: int, path_index: int, tag: int) -> np.random.Generator:
    """Counter-based generator for one (seed, path, purpose) triple."""
    if path_index < 0:
        raise SimulationConfigError("path_index must be non-negative")
    key = np.array(
        [int(master_seed) & _MASK64, (int(path_index) * 4 + int(tag)) & _MASK64],
        dtype=np.uint64,
    )
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class PathStreams:
    """The four per-path generators, created lazily by tag."""

    master_seed: int
    path_index: int

    def brownian(self) -> np.random.Generator:
        return stream(self.master_seed, self.path_index, TAG_BROWNIAN)

    def jump_count(self) -> np.random.Generator:
        return stream(self.master_seed, self.path_index, TAG_JUMP_COUNT)

    def jump_times(self) -> np.random.Generator:
        return stream(self.master_seed, self.path_index, TAG_JUMP_TIMES)

    def jump_marks(self) -> np.random.Generator:
        return stream(self.master_seed, self.path_index, TAG_JUMP_MARKS)


@dataclass(frozen=True)
class LevyMeasureSpec:
    """Finite-activity jump intensity measure on the punctured unit ball.

    Two families are supported:

    * ``atomic``: finitely many atoms (location, mass) with every location in
      E; moments are exact finite sums.
    * ``annulus-uniform``: total mass spread uniformly over the one-norm
      annulus {r0 <= |x|_1 <= r1} with 0 < r0 <= r1 < 1; first moment is zero
      by sign symmetry.

    ``mean_mark`` caches the vector integral of x over the measure and
    ``second_moment`` the integral of |x|_1^2, both used as compensator and
    variance references.
    """

    kind: str
    dim: int
    total_mass: float
    mean_mark: np.ndarray
    second_moment: float
    atom_locations: np.ndarray | None = None
    atom_masses: np.ndarray | None = None
    inner_radius: float = 0.0
    outer_radius: float = 0.0

    @staticmethod
    def atomic(locations, masses) -> "LevyMeasureSpec":
        locations = np.atleast_2d(np.asarray(locations, dtype=float))
        masses = np.asarray(masses, dtype=float).ravel()
        if locations.shape[0] != masses.shape[0]:
            raise SimulationConfigError("one mass per atom location required")
        if not (np.isfinite(locations).all() and np.isfinite(masses).all()):
            raise UnsupportedMeasureError("atoms must be finite")
        if locations.shape[0] and (masses <= 0).any():
            raise SimulationConfigError("atom masses must be positive")
        for i in range(locations.shape[0]):
            r = one_norm(locations[i])
            if not 0.0 < r < 1.0:
                raise SimulationConfigError(
                    f"atom {i}: mark outside punctured unit ball (one-norm {r:g})"
                )
        dim = locations.shape[1]
        total = float(masses.sum())
        mean = masses @ locations if locations.size else np.zeros(dim)
        s2 = float(masses @ np.abs(locations).sum(axis=1) ** 2) if locations.size else 0.0
        return LevyMeasureSpec(
            kind="atomic",
            dim=dim,
            total_mass=total,
            mean_mark=np.asarray(mean, dtype=float),
            second_moment=s2,
            atom_locations=locations,
            atom_masses=masses,
        )

    @staticmethod
    def annulus_uniform(total_mass: float, r0: float, r1: float, dim: int) -> "LevyMeasureSpec":
        if not math.isfinite(total_mass):
            raise UnsupportedMeasureError(
                "infinite-activity measures are not supported"
            )
        if total_mass < 0:
            raise SimulationConfigError("total_mass must be non-negative")
        if not (0.0 < r0 <= r1 < 1.0):
            raise SimulationConfigError(
                f"annulus radii must satisfy 0 < r0 <= r1 < 1, got ({r0}, {r1})"
            )
        if dim < 1:
            raise SimulationConfigError("annulus measure needs dim >= 1")
        # Radius density is proportional to rho^{dim-1} on [r0, r1]; the mean
        # of rho^2 has the closed form below (limit r1 -> r0 is rho == r0).
        if r1 > r0:
            mean_r2 = (
                dim
                * (r1 ** (dim + 2) - r0 ** (dim + 2))
                / ((dim + 2) * (r1**dim - r0**dim))
            )
        else:
            mean_r2 = r0 * r0
        return LevyMeasureSpec(
            kind="annulus-uniform",
            dim=dim,
            total_mass=float(total_mass),
            mean_mark=np.zeros(dim),
            second_moment=float(total_mass * mean_r2),
            inner_radius=float(r0),
            outer_radius=float(r1),
        )


@dataclass(frozen=True)
class JumpTrain:
    """One realisation of the marked Poisson events on (0, horizon]."""

    horizon: float
    times: np.ndarray
    marks: np.ndarray

    def __post_init__(self):
        if self.times.shape[0] != self.marks.shape[0]:
            raise SimulationConfigError("one mark per jump time required")
        if self.times.size and (np.diff(self.times) < 0).any():
            raise SimulationConfigError("jump times must be sorted")


def sample_prm(
    levy: LevyMeasureSpec, horizon: float, streams: PathStreams
) -> JumpTrain:
    """Draw one finite-activity Poisson train: count, sorted times, marks."""
    if not horizon > 0:
        raise SimulationConfigError("horizon must be positive")
    if not math.isfinite(levy.total_mass):
        raise UnsupportedMeasureError("infinite-activity measures are not supported")
    rate = levy.total_mass * horizon
    count = int(streams.jump_count().poisson(rate)) if rate > 0 else 0
    if count == 0:
        return JumpTrain(
            horizon=horizon,
            times=np.empty(0),
            marks=np.empty((0, levy.dim)),
        )
    # uniform on (0, horizon]: flip [0, 1) draws so 0 is excluded
    u = streams.jump_times().random(count)
    times = np.sort(horizon * (1.0 - u))
    marks = _sample_marks(levy, count, streams.jump_marks())
    return JumpTrain(horizon=horizon, times=times, marks=marks)


def _sample_marks(levy: LevyMeasureSpec, count: int, gen: np.random.Generator) -> np.ndarray:
    if levy.kind == "atomic":
        weights = levy.atom_masses / levy.total_mass
        idx = gen.choice(levy.atom_masses.shape[0], size=count, p=weights)
        return levy.atom_locations[idx]
    if levy.kind == "annulus-uniform":
        n = levy.dim
        # direction uniform on the one-norm sphere: normalised exponentials
        # with independent random signs; radius by inverse cdf of rho^{n-1}.
        mags = gen.standard_exponential((count, n))
        signs = gen.integers(0, 2, size=(count, n)) * 2 - 1
        direction = signs * mags / mags.sum(axis=1, keepdims=True)
        u = gen.random(count)
        r0n = levy.inner_radius**n
        r1n = levy.outer_radius**n
        radius = (r0n + u * (r1n - r0n)) ** (1.0 / n)
        return direction * radius[:, None]
    raise UnsupportedMeasureError(f"unknown measure kind {levy.kind!r}")


def compensator_mean(levy: LevyMeasureSpec, jump_family, state: np.ndarray) -> np.ndarray:
    """Closed-form integral of F(state, x) over the measure.

    Only the linear-in-mark family F(y, x) = G(y) x is admissible, for which
    the integral is G(y) times the measure's first moment.
    """
    if getattr(jump_family, "kind", None) != "linear-in-mark":
        raise UnsupportedFamilyError(
            "compensator_mean requires the linear-in-mark jump family"
        )
    return jump_family.coefficient(state) @ levy.mean_mark


@dataclass(frozen=True)
class TimeGrid:
    """Shared node set: multiples of delta, jump times, and h-refinement.

    ``sample_index[i]`` is the integer k with k*delta <= times[i] <
    (k+1)*delta, assigned structurally during construction.
    ``sampling_nodes[k]`` is the node index sitting exactly at k*delta.
    ``gap_group[i]`` maps step i to a row of ``unique_gaps`` so that exact
    propagators can be evaluated once per distinct step size.  Jump events
    are carried per event (``jump_nodes`` may repeat a node in the
    measure-zero case of coinciding event times).
    """

    horizon: float
    delta: float
    step_limit: float
    times: np.ndarray
    dt: np.ndarray
    gap_group: np.ndarray
    unique_gaps: np.ndarray
    sample_index: np.ndarray
    is_sampling: np.ndarray
    sampling_nodes: np.ndarray
    jump_nodes: np.ndarray
    jump_marks: np.ndarray

    @property
    def node_count(self) -> int:
        return self.times.shape[0]

    def sample_instant(self, node: int) -> tuple[float, int]:
        """Greatest sampling instant at or before a node, as (time, index)."""
        k = int(self.sample_index[node])
        return k * self.delta, k

    def latch_nodes(self) -> np.ndarray:
        """For every node, the node index of its held sampling instant."""
        return self.sampling_nodes[self.sample_index]


def _sampling_instant_count(horizon: float, delta: float) -> int:
    """Largest k with k*delta <= horizon, decided in float arithmetic."""
    k = int(math.floor(horizon / delta))
    while (k + 1) * delta <= horizon:
        k += 1
    while k > 0 and k * delta > horizon:
        k -= 1
    return k


def build_grid(
    horizon: float,
    delta: float,
    step_limit: float,
    jump_times: np.ndarray,
    jump_marks: np.ndarray,
) -> TimeGrid:
    """Union of sampling instants, jump times, 0 and horizon, refined to
    gaps of at most ``step_limit``."""
    if not (horizon > 0 and delta > 0 and step_limit > 0):
        raise SimulationConfigError("horizon, delta and step_limit must be positive")
    jump_times = np.asarray(jump_times, dtype=float)
    if jump_times.size and (
        jump_times.min() <= 0.0 or jump_times.max() > horizon
    ):
        raise SimulationConfigError("jump times must lie in (0, horizon]")

    k_max = _sampling_instant_count(horizon, delta)
    sampling_times = np.arange(k_max + 1) * delta
    anchors = np.unique(np.concatenate([sampling_times, jump_times, [0.0, horizon]]))

    time_chunks = [np.array([0.0])]
    index_chunks = [np.zeros(1, dtype=np.int64)]
    group_chunks: list[np.ndarray] = []
    gap_values: list[float] = []
    sampling_nodes = [0]
    jump_nodes: list[int] = []

    next_sample = 1  # sampling_times[0] == 0.0 already consumed by node 0
    jt_sorted = np.sort(jump_times)
    next_jump = 0
    node_count = 1
    k_here = 0
    for group in range(anchors.size - 1):
        a = anchors[group]
        b = anchors[group + 1]
        width = b - a
        pieces = max(1, int(math.ceil(width / step_limit)))
        gap = width / pieces
        gap_values.append(gap)
        chunk = a + np.arange(1, pieces + 1) * gap
        chunk[-1] = b
        time_chunks.append(chunk)
        group_chunks.append(np.full(pieces, group, dtype=np.int64))
        idx = np.full(pieces, k_here, dtype=np.int64)
        node_count += pieces
        if next_sample <= k_max and b == sampling_times[next_sample]:
            k_here = next_sample
            idx[-1] = k_here
            sampling_nodes.append(node_count - 1)
            next_sample += 1
        index_chunks.append(idx)
        while next_jump < jt_sorted.size and jt_sorted[next_jump] == b:
            jump_nodes.append(node_count - 1)
            next_jump += 1
    if next_jump != jt_sorted.size:
        raise SimulationConfigError("a jump time failed to land on a grid node")

    times_arr = np.concatenate(time_chunks)
    dt = np.diff(times_arr)
    sample_index = np.concatenate(index_chunks)
    gap_arr = np.asarray(gap_values)
    unique_gaps, inverse = np.unique(gap_arr, return_inverse=True)
    gap_group_arr = inverse[np.concatenate(group_chunks)]
    is_sampling = np.zeros(times_arr.size, dtype=bool)
    is_sampling[np.asarray(sampling_nodes, dtype=np.int64)] = True

    # marks ordered like the (sorted) event times
    marks_arr = np.atleast_2d(np.asarray(jump_marks, dtype=float))
    if jump_times.size:
        marks_sorted = marks_arr[np.argsort(jump_times, kind="stable")]
    else:
        marks_sorted = marks_arr.reshape(0, marks_arr.shape[-1])

    return TimeGrid(
        horizon=float(horizon),
        delta=float(delta),
        step_limit=float(step_limit),
        times=times_arr,
        dt=dt,
        gap_group=gap_group_arr.astype(np.int64),
        unique_gaps=unique_gaps,
        sample_index=sample_index,
        is_sampling=is_sampling,
        sampling_nodes=np.asarray(sampling_nodes, dtype=np.int64),
        jump_nodes=np.asarray(jump_nodes, dtype=np.int64),
        jump_marks=marks_sorted,
    )


def sample_brownian(grid: TimeGrid, gen: np.random.Generator, dim: int) -> np.ndarray:
    """Per-step Gaussian increments, one row per grid gap.

    Each coordinate of row i has mean zero and variance dt[i]; a zero-width
    gap therefore yields an exactly-zero increment.
    """
    z = gen.standard_normal((grid.dt.size, dim))
    return z * np.sqrt(grid.dt)[:, None]


@dataclass(frozen=True)
class NoiseRecord:
    """All random inputs of one path, tied to the grid that shaped them."""

    master_seed: int
    path_index: int
    grid: TimeGrid
    increments: np.ndarray
    jumps: JumpTrain
    dim: int = field(default=0)

    def __post_init__(self):
        if self.increments.shape[0] != self.grid.dt.size:
            raise GridMismatchError("increment count must equal grid step count")
        object.__setattr__(self, "dim", self.increments.shape[1])


def build_noise_record(
    levy: LevyMeasureSpec,
    horizon: float,
    delta: float,
    step_limit: float,
    master_seed: int,
    path_index: int,
    dim: int,
) -> NoiseRecord:
    """Sample jumps, build the jump-adapted grid, then sample increments."""
    streams = PathStreams(master_seed, path_index)
    train = sample_prm(levy, horizon, streams) if levy.total_mass > 0 else JumpTrain(
        horizon=horizon, times=np.empty(0), marks=np.empty((0, dim))
    )
    grid = build_grid(horizon, delta, step_limit, train.times, train.marks)
    increments = sample_brownian(grid, streams.brownian(), dim)
    return NoiseRecord(
        master_seed=master_seed,
        path_index=path_index,
        grid=grid,
        increments=increments,
        jumps=train,
    )
