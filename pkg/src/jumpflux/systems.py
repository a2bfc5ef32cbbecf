"""Coupled simulation of the five processes sharing one noise record.

For a linear plant with matrices A, B, K and sampling period delta the
following paths are built on one jump-adapted grid from one NoiseRecord:

* ``closed_loop``       exact solution of y' = (A - BK) y,
* ``sampled_hold``      exact solution of y' = A y - BK y_held,
* ``jump_diffusion``    the noisy sample-and-hold state, noise size epsilon,
* ``fluctuation``       (jump_diffusion - closed_loop) / epsilon,
* ``limit_fluctuation`` Euler solution of the small-noise limit of the
  fluctuation, whose extra drift (c/2) BK (A-BK) y_t carries the sampling
  effect, with c the limit of delta/epsilon.

Deterministic motion between nodes is integrated with exact propagators
(matrix exponentials per distinct gap).  For the noisy path this makes the
map epsilon -> path continuous at epsilon = 0: with the noise terms removed
the recursion is the sampled-hold recursion, and epsilon = 0 short-circuits
to it bitwise.  Diffusion and compensated-jump terms use the standard
left-point (Ito) evaluation, so the strong error keeps the usual first
order in the internal step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import SimulationConfigError
from .linalg import expm_stack, propagator_stack
from .noise import (
    LevyMeasureSpec,
    NoiseRecord,
    TimeGrid,
    build_noise_record,
)


def _as_matrix(m, rows, cols, name) -> np.ndarray:
    arr = np.asarray(m, dtype=float)
    if arr.shape != (rows, cols):
        raise SimulationConfigError(
            f"{name}: expected shape {(rows, cols)}, got {arr.shape}"
        )
    if not np.isfinite(arr).all():
        raise SimulationConfigError(f"{name}: entries must be finite")
    return arr


@dataclass(frozen=True)
class SystemSpec:
    """Plant matrices, feedback gain and initial state."""

    A: np.ndarray
    B: np.ndarray
    K: np.ndarray
    y0: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.A, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise SimulationConfigError(f"A must be square, got shape {a.shape}")
        n = a.shape[0]
        b = np.asarray(self.B, dtype=float)
        if b.ndim != 2 or b.shape[0] != n:
            raise SimulationConfigError(f"B must have {n} rows, got shape {b.shape}")
        m = b.shape[1]
        object.__setattr__(self, "A", _as_matrix(a, n, n, "A"))
        object.__setattr__(self, "B", _as_matrix(b, n, m, "B"))
        object.__setattr__(self, "K", _as_matrix(self.K, m, n, "K"))
        y0 = np.asarray(self.y0, dtype=float).ravel()
        if y0.shape != (n,) or not np.isfinite(y0).all():
            raise SimulationConfigError(f"y0 must be a finite vector of length {n}")
        object.__setattr__(self, "y0", y0)

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    @property
    def input_dim(self) -> int:
        return self.B.shape[1]

    @property
    def feedback(self) -> np.ndarray:
        """The n-by-n product BK."""
        return self.B @ self.K

    @property
    def closed_loop_generator(self) -> np.ndarray:
        return self.A - self.feedback


def _as_slope_stack(slopes, dim, name) -> np.ndarray:
    if slopes is None:
        return np.zeros((dim, dim, dim))
    arr = np.asarray(slopes, dtype=float)
    if arr.shape != (dim, dim, dim):
        raise SimulationConfigError(
            f"{name}: expected {dim} matrices of shape {(dim, dim)}, got {arr.shape}"
        )
    if not np.isfinite(arr).all():
        raise SimulationConfigError(f"{name}: entries must be finite")
    return arr


@dataclass(frozen=True)
class DiffusionFamily:
    """Diffusion coefficient sigma(y) = base + sum_i y_i slopes[i].

    Affine in the state, hence globally Lipschitz with constant equal to the
    sum of the slope norms and of linear growth by construction.  ``kind`` is
    "constant" when all slopes vanish.
    """

    kind: str
    base: np.ndarray
    slopes: np.ndarray

    @staticmethod
    def constant(base) -> "DiffusionFamily":
        base = np.asarray(base, dtype=float)
        n = base.shape[0]
        return DiffusionFamily(
            kind="constant",
            base=_as_matrix(base, n, n, "diffusion.base"),
            slopes=np.zeros((n, n, n)),
        )

    @staticmethod
    def affine(base, slopes) -> "DiffusionFamily":
        base = np.asarray(base, dtype=float)
        n = base.shape[0]
        return DiffusionFamily(
            kind="affine",
            base=_as_matrix(base, n, n, "diffusion.base"),
            slopes=_as_slope_stack(slopes, n, "diffusion.state_slopes"),
        )

    @property
    def dim(self) -> int:
        return self.base.shape[0]

    def evaluate(self, state: np.ndarray) -> np.ndarray:
        return self.base + np.tensordot(state, self.slopes, axes=(0, 0))

    def evaluate_path(self, states: np.ndarray) -> np.ndarray:
        """sigma at every row of a (N, n) path, returned as (N, n, n)."""
        return self.base + np.einsum("tj,jab->tab", states, self.slopes)


@dataclass(frozen=True)
class JumpFamily:
    """Jump coefficient F(y, x) = G(y) x with G(y) = base + sum_i y_i slopes[i].

    Linear in the mark and affine in the state; together with a
    finite-second-moment measure this keeps the Lipschitz and growth bounds
    automatic.
    """

    base: np.ndarray
    slopes: np.ndarray
    kind: str = "linear-in-mark"

    @staticmethod
    def linear_in_mark(base, slopes=None) -> "JumpFamily":
        base = np.asarray(base, dtype=float)
        n = base.shape[0]
        return JumpFamily(
            base=_as_matrix(base, n, n, "jump.base"),
            slopes=_as_slope_stack(slopes, n, "jump.state_slopes"),
        )

    @staticmethod
    def zero(dim: int) -> "JumpFamily":
        return JumpFamily(base=np.zeros((dim, dim)), slopes=np.zeros((dim, dim, dim)))

    @property
    def dim(self) -> int:
        return self.base.shape[0]

    def coefficient(self, state: np.ndarray) -> np.ndarray:
        return self.base + np.tensordot(state, self.slopes, axes=(0, 0))

    def coefficient_path(self, states: np.ndarray) -> np.ndarray:
        return self.base + np.einsum("tj,jab->tab", states, self.slopes)

    def apply(self, state: np.ndarray, mark: np.ndarray) -> np.ndarray:
        return self.coefficient(state) @ mark


REGIMES = ("R1", "R2", "R3-diagnostic")


@dataclass(frozen=True)
class RegimeSchedule:
    """Ladder of epsilon values with the delta(epsilon) coupling rule.

    * R1: delta = epsilon**p with p > 1, limit ratio c = 0.
    * R2: delta = delta_coeff * epsilon with limit ratio c > 0 (the shipped
      rule is delta_coeff == c, making the ratio deviation kappa vanish).
    * R3-diagnostic: delta = epsilon**p with 0 < p < 1; the ratio diverges
      and no fluctuation limit is compared, only the delta-rescaled gap.

    Every R1/R2 ladder entry must satisfy delta < (c + 1) * epsilon, the
    small-epsilon admissibility window for the fluctuation comparison.
    """

    regime: str
    epsilons: tuple[float, ...]
    c: float = 0.0
    p: float = 2.0
    delta_coeff: float | None = None

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise SimulationConfigError(
                f"regime must be one of {REGIMES}, got {self.regime!r}"
            )
        eps = tuple(float(e) for e in self.epsilons)
        if len(eps) == 0 or any(e <= 0 for e in eps):
            raise SimulationConfigError("epsilon ladder entries must be positive")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise SimulationConfigError("epsilon ladder must be strictly decreasing")
        object.__setattr__(self, "epsilons", eps)
        if self.regime == "R1":
            if self.c != 0.0:
                raise SimulationConfigError("R1 requires c = 0")
            if not self.p > 1:
                raise SimulationConfigError("R1 requires exponent p > 1")
            if any(e >= 1 for e in eps):
                raise SimulationConfigError("R1 ladder must stay below 1")
        elif self.regime == "R2":
            if not self.c > 0:
                raise SimulationConfigError("R2 requires c > 0")
            coeff = self.c if self.delta_coeff is None else float(self.delta_coeff)
            if not coeff > 0:
                raise SimulationConfigError("R2 delta coefficient must be positive")
            object.__setattr__(self, "delta_coeff", coeff)
        else:  # R3-diagnostic
            if not 0 < self.p < 1:
                raise SimulationConfigError(
                    "R3-diagnostic requires exponent 0 < p < 1"
                )
        if self.regime in ("R1", "R2"):
            for e in eps:
                d = self.delta_of(e)
                if not d < (self.c + 1) * e:
                    raise SimulationConfigError(
                        "epsilon-zero condition violated: "
                        f"delta {d:g} >= (c+1)*epsilon {(self.c + 1) * e:g} "
                        f"at epsilon {e:g}"
                    )

    def delta_of(self, epsilon: float) -> float:
        if self.regime == "R2":
            return self.delta_coeff * epsilon
        return epsilon**self.p

    def kappa_of(self, epsilon: float) -> float:
        """Deviation of delta/epsilon from its limit (R1 and R2 only)."""
        if self.regime == "R3-diagnostic":
            return float("nan")
        return abs(self.delta_of(epsilon) / epsilon - self.c)

    def points(self) -> list[tuple[float, float, float]]:
        return [(e, self.delta_of(e), self.kappa_of(e)) for e in self.epsilons]


@dataclass(frozen=True)
class Model:
    """System plus noise description, the static half of an experiment."""

    system: SystemSpec
    diffusion: DiffusionFamily
    jump: JumpFamily
    levy: LevyMeasureSpec
    horizon: float

    def __post_init__(self):
        n = self.system.dim
        for name, d in (
            ("diffusion", self.diffusion.dim),
            ("jump", self.jump.dim),
        ):
            if d != n:
                raise SimulationConfigError(
                    f"{name} family dimension {d} does not match state dimension {n}"
                )
        if self.levy.dim != n:
            if self.levy.total_mass > 0:
                raise SimulationConfigError(
                    f"levy measure dimension {self.levy.dim} does not match "
                    f"state dimension {n}"
                )
            # a massless measure carries no marks; coerce its bookkeeping dim
            object.__setattr__(
                self, "levy", LevyMeasureSpec.atomic(np.empty((0, n)), [])
            )
        if not self.horizon > 0:
            raise SimulationConfigError("horizon must be positive")


@dataclass(frozen=True)
class PathBundle:
    """One coupled realisation of all five processes on a shared grid.

    ``jump_diffusion_prejump`` stores the left limit at every node (equal to
    the node value except at jump nodes); the fluctuation analysis needs it
    to evaluate coefficients at pre-jump states without resampling.
    """

    grid: TimeGrid
    noise: NoiseRecord
    closed_loop: np.ndarray
    sampled_hold: np.ndarray
    jump_diffusion: np.ndarray
    jump_diffusion_prejump: np.ndarray
    fluctuation: np.ndarray
    limit_fluctuation: np.ndarray
    epsilon: float
    delta: float
    c: float

    def delta_rescaled_fluctuation(self) -> np.ndarray:
        """Diagnostic rescaling (state - closed loop) / delta used when the
        sampling period is the coarser parameter; no limit is attached."""
        return (self.jump_diffusion - self.closed_loop) / self.delta


def _closed_propagators(system: SystemSpec, grid: TimeGrid) -> np.ndarray:
    gen = system.closed_loop_generator
    return expm_stack(gen[None, :, :] * grid.unique_gaps[:, None, None])


def _hold_propagators(system: SystemSpec, grid: TimeGrid) -> tuple[np.ndarray, np.ndarray]:
    phis, psis = propagator_stack(system.A, grid.unique_gaps)
    psis_bk = psis @ system.feedback
    return np.ascontiguousarray(phis), np.ascontiguousarray(psis_bk)


def solve_closed_loop(system: SystemSpec, grid: TimeGrid) -> np.ndarray:
    """Closed-loop path y_t = e^{(A-BK) t} y0 at every grid node."""
    out = np.empty((grid.node_count, system.dim))
    phis = _closed_propagators(system, grid)
    _kernels.propagate_closed(phis, grid.gap_group, system.y0, out)
    return out


def solve_sampled_hold(system: SystemSpec, delta: float, grid: TimeGrid) -> np.ndarray:
    """Sample-and-hold path, advanced exactly within each hold interval."""
    if delta != grid.delta:
        raise SimulationConfigError(
            f"grid was built for delta {grid.delta:g}, not {delta:g}"
        )
    phis, psis_bk = _hold_propagators(system, grid)
    out = np.empty((grid.node_count, system.dim))
    _kernels.propagate_sampled_hold(
        phis, psis_bk, grid.gap_group, grid.is_sampling, system.y0, out
    )
    return out


def simulate_jump_diffusion(
    system: SystemSpec,
    diffusion: DiffusionFamily,
    jump: JumpFamily,
    levy: LevyMeasureSpec,
    epsilon: float,
    delta: float,
    noise: NoiseRecord,
) -> tuple[np.ndarray, np.ndarray]:
    """Noisy sample-and-hold path and its per-node pre-jump values.

    With epsilon = 0 the call routes to the exact sampled-hold integrator,
    so the deterministic limit is reproduced bitwise.
    """
    grid = noise.grid
    if delta != grid.delta:
        raise SimulationConfigError(
            f"noise record was built for delta {grid.delta:g}, not {delta:g}"
        )
    if epsilon < 0:
        raise SimulationConfigError("epsilon must be non-negative")
    if epsilon == 0.0:
        path = solve_sampled_hold(system, delta, grid)
        return path, path.copy()
    phis, psis_bk = _hold_propagators(system, grid)
    out = np.empty((grid.node_count, system.dim))
    out_pre = np.empty_like(out)
    _kernels.step_jump_diffusion(
        phis,
        psis_bk,
        grid.gap_group,
        grid.dt,
        noise.increments,
        grid.is_sampling,
        grid.jump_nodes,
        grid.jump_marks,
        diffusion.base,
        diffusion.slopes,
        jump.base,
        jump.slopes,
        levy.mean_mark,
        float(epsilon),
        system.y0,
        out,
        out_pre,
    )
    return out, out_pre


def simulate_limit_fluctuation(
    system: SystemSpec,
    diffusion: DiffusionFamily,
    jump: JumpFamily,
    levy: LevyMeasureSpec,
    c: float,
    noise: NoiseRecord,
    closed_path: np.ndarray,
) -> np.ndarray:
    """Euler path of the limiting fluctuation equation.

    All coefficients are frozen at the deterministic closed-loop path:
    dZ = (A-BK) Z dt + (c/2) BK (A-BK) y dt + sigma(y) dW + jump terms with
    coefficient G(y), compensated by G(y) m1 dt.  Z_0 = 0.
    """
    grid = noise.grid
    if closed_path.shape != (grid.node_count, system.dim):
        raise SimulationConfigError("closed path does not match the grid")
    gen = system.closed_loop_generator
    y_left = closed_path[:-1]
    source = (0.5 * c) * (y_left @ (system.feedback @ gen).T)
    sig = diffusion.evaluate_path(y_left)
    noise_term = np.einsum("iab,ib->ia", sig, noise.increments)
    comp = jump.coefficient_path(y_left) @ levy.mean_mark
    forcing = noise_term + (source - comp) * grid.dt[:, None]
    if grid.jump_nodes.size:
        coeff = jump.coefficient_path(closed_path[grid.jump_nodes])
        jump_disp = np.einsum("jab,jb->ja", coeff, grid.jump_marks)
    else:
        jump_disp = np.zeros((0, system.dim))
    out = np.empty((grid.node_count, system.dim))
    _kernels.step_limit_fluctuation(
        gen, grid.dt, forcing, grid.jump_nodes, jump_disp, out
    )
    return out


def rescale_fluctuation(
    state_path: np.ndarray, closed_path: np.ndarray, epsilon: float
) -> np.ndarray:
    """Definitional fluctuation (state - closed loop) / epsilon."""
    if epsilon == 0.0:
        raise ZeroDivisionError(
            "epsilon = 0 cannot be rescaled; compare against the sampled-hold "
            "path directly instead"
        )
    return (state_path - closed_path) / epsilon


def default_step_limit(delta: float, horizon: float) -> float:
    """Shipped internal-step policy min(delta / 50, horizon / 5000)."""
    return min(delta / 50.0, horizon / 5000.0)


def simulate_coupled_bundle(
    model: Model,
    epsilon: float,
    delta: float,
    c: float,
    step_limit: float,
    master_seed: int,
    path_index: int,
) -> PathBundle:
    """All five coupled paths from one noise record.

    Deterministic in (master_seed, path_index); every process consumes the
    identical NoiseRecord object, which is what makes the comparisons
    pathwise rather than merely in distribution.
    """
    if not epsilon > 0:
        raise SimulationConfigError(
            "simulate_coupled_bundle requires epsilon > 0; deterministic "
            "baselines come from the solvers directly"
        )
    if not step_limit <= delta / 20.0:
        raise SimulationConfigError(
            f"internal step {step_limit:g} must be at most delta/20 = {delta / 20:g}"
        )
    noise = build_noise_record(
        model.levy,
        model.horizon,
        delta,
        step_limit,
        master_seed,
        path_index,
        model.system.dim,
    )
    closed = solve_closed_loop(model.system, noise.grid)
    held = solve_sampled_hold(model.system, delta, noise.grid)
    state, state_pre = simulate_jump_diffusion(
        model.system, model.diffusion, model.jump, model.levy, epsilon, delta, noise
    )
    fluct = rescale_fluctuation(state, closed, epsilon)
    limit = simulate_limit_fluctuation(
        model.system, model.diffusion, model.jump, model.levy, c, noise, closed
    )
    return PathBundle(
        grid=noise.grid,
        noise=noise,
        closed_loop=closed,
        sampled_hold=held,
        jump_diffusion=state,
        jump_diffusion_prejump=state_pre,
        fluctuation=fluct,
        limit_fluctuation=limit,
        epsilon=float(epsilon),
        delta=float(delta),
        c=float(c),
    )
