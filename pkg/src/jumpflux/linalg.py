"""Small dense matrix helpers and exact propagators for linear flows.

Everything here works on plain float64 numpy arrays.  State dimensions are
small (n <= 8 in the shipped experiments), so the matrix exponential is
implemented directly as a Pade-13 scaling-and-squaring evaluation that also
accepts stacks of matrices: one experiment needs the propagator pair
(e^{A h}, int_0^h e^{A u} du) for every distinct step size in a refined time
grid, and evaluating the whole stack in a handful of vectorised matmuls is
far cheaper than looping over a library call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SimulationConfigError

# Denominator/numerator coefficients of the degree-13 Pade approximant to
# exp(x) and the matching double-precision norm threshold (Higham 2005).
_PADE13 = (
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
)
_PADE13_THETA = 5.371920351148152


def one_norm(v: np.ndarray) -> float:
    """Sum of absolute entries of a vector."""
    return float(np.abs(np.asarray(v, dtype=float)).sum())


def mat_one_norm(m: np.ndarray) -> float:
    """Induced one-norm of a matrix: the largest column absolute sum."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2:
        raise SimulationConfigError("mat_one_norm expects a 2-d array")
    if m.size == 0:
        return 0.0
    return float(np.abs(m).sum(axis=0).max())


def expm_stack(mats: np.ndarray) -> np.ndarray:
    """exp of a stack of square matrices, shape (..., n, n).

    Pade-13 with scaling and squaring; the scaling power is chosen from the
    largest one-norm in the stack, so every slice is evaluated inside the
    approximant's validity region.  Relative accuracy is near machine eps for
    one-norms up to a few hundred.
    """
    a = np.asarray(mats, dtype=float)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise SimulationConfigError("expm_stack expects square matrices")
    n = a.shape[-1]
    norms = np.abs(a).sum(axis=-2).max(axis=-1)
    max_norm = float(norms.max()) if norms.size else 0.0
    if max_norm == 0.0:
        out = np.zeros_like(a)
        out[...] = np.eye(n)
        return out
    squarings = 0
    if max_norm > _PADE13_THETA:
        squarings = int(np.ceil(np.log2(max_norm / _PADE13_THETA)))
        a = a / (2.0**squarings)

    eye = np.broadcast_to(np.eye(n), a.shape)
    b = _PADE13
    a2 = a @ a
    a4 = a2 @ a2
    a6 = a4 @ a2
    u = a @ (
        a6 @ (b[13] * a6 + b[11] * a4 + b[9] * a2)
        + b[7] * a6
        + b[5] * a4
        + b[3] * a2
        + b[1] * eye
    )
    v = (
        a6 @ (b[12] * a6 + b[10] * a4 + b[8] * a2)
        + b[6] * a6
        + b[4] * a4
        + b[2] * a2
        + b[0] * eye
    )
    r = np.linalg.solve(v - u, v + u)
    for _ in range(squarings):
        r = r @ r
    return r


def expm(a: np.ndarray, t: float = 1.0) -> np.ndarray:
    """Matrix exponential e^{a t} of a single square matrix."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise SimulationConfigError(
            f"expm expects a square matrix, got shape {a.shape}"
        )
    if not np.isfinite(a).all() or not np.isfinite(t):
        raise SimulationConfigError("expm expects finite entries and time")
    return expm_stack(a * float(t))


@dataclass(frozen=True)
class Propagator:
    """Exact one-step integrator data for a linear flow y' = a y + u.

    ``phi`` is e^{a h}, ``psi`` is int_0^h e^{a u} du; together they advance
    the state under any constant forcing u via y(t+h) = phi y(t) + psi u.
    They satisfy phi = I + a psi.
    """

    phi: np.ndarray
    psi: np.ndarray
    step: float


def propagator_stack(a: np.ndarray, steps: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(phi, psi) pairs for one generator over many step sizes.

    Both blocks come from the exponential of the augmented matrix
    [[a, I], [0, 0]] * h, whose top-left block is e^{a h} and whose top-right
    block is int_0^h e^{a u} du.  One stacked expm call serves all steps.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise SimulationConfigError(
            f"propagator_stack expects a square matrix, got shape {a.shape}"
        )
    steps = np.asarray(steps, dtype=float)
    n = a.shape[0]
    aug = np.zeros((steps.size, 2 * n, 2 * n))
    aug[:, :n, :n] = a
    aug[:, :n, n:] = np.eye(n)
    aug *= steps.reshape(-1, 1, 1)
    big = expm_stack(aug)
    return np.ascontiguousarray(big[:, :n, :n]), np.ascontiguousarray(big[:, :n, n:])


def propagator(a: np.ndarray, h: float) -> Propagator:
    """Exact propagator of y' = a y over one step of length h > 0."""
    if not h > 0:
        raise SimulationConfigError(f"propagator step must be positive, got {h}")
    phis, psis = propagator_stack(a, np.array([float(h)]))
    return Propagator(phi=phis[0], psi=psis[0], step=float(h))
