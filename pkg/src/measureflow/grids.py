"""Uniform time grids, grid-aligned sample paths, and Euler construction of
continuous semimartingales X = X_0 + A + M + C, where A is an absolutely
continuous drift part, M an idiosyncratic martingale and C the common-noise
integral.

Every stochastic integral in the package is a left-point (Ito) sum on the
same grid; the additive decomposition X_k = x_0 + A_k + M_k + C_k holds at
every node up to floating rounding.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import IO, Callable

import numpy as np

from .measures import EmpiricalMeasure, bare_measure
from .rng import RngKey


class CoefficientError(RuntimeError):
    """A coefficient evaluated to a non-finite value or an unusable shape."""


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid 0 = t_0 < ... < t_K = horizon with step horizon / steps."""

    horizon: float
    steps: int

    def __post_init__(self) -> None:
        if not isinstance(self.steps, (int, np.integer)):
            raise ValueError("steps must be an integer")
        if not np.isfinite(self.horizon) or self.horizon <= 0.0:
            raise ValueError("horizon must be a positive finite real")
        if self.steps < 1:
            raise ValueError("steps must be at least 1")

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def nodes(self) -> np.ndarray:
        cached = self.__dict__.get("_nodes")
        if cached is None:
            cached = np.linspace(0.0, self.horizon, self.steps + 1)
            cached.flags.writeable = False
            object.__setattr__(self, "_nodes", cached)
        return cached


def make_grid(horizon: float, steps: int) -> TimeGrid:
    return TimeGrid(float(horizon), steps)


@dataclass(frozen=True)
class SamplePath:
    """Values of one d-dimensional path at every grid node."""

    grid: TimeGrid
    values: np.ndarray  # (steps + 1, d)

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.ndim != 2 or vals.shape[0] != self.grid.steps + 1:
            raise ValueError(
                f"values must have shape (steps + 1, d), got {vals.shape} for "
                f"{self.grid.steps} steps"
            )
        if not np.isfinite(vals).all():
            raise ValueError("path values must be finite")
        vals = vals.copy()
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def increments(self) -> np.ndarray:
        return self.values[1:] - self.values[:-1]

    def component(self, index: int) -> "SamplePath":
        return SamplePath(self.grid, self.values[:, index : index + 1])

    def write_csv(self, fp: IO[str]) -> None:
        fp.write("t," + ",".join(f"x_{i + 1}" for i in range(self.dim)) + "\n")
        for t, row in zip(self.grid.nodes, self.values):
            fp.write(repr(float(t)) + "," + ",".join(repr(float(v)) for v in row) + "\n")


def zero_path(grid: TimeGrid, dim: int = 1) -> SamplePath:
    return SamplePath(grid, np.zeros((grid.steps + 1, dim)))


def sample_brownian(grid: TimeGrid, dim: int, key: RngKey) -> SamplePath:
    """Standard Brownian path: starts at 0, increments N(0, dt * I)."""
    gen = key.generator()
    inc = gen.standard_normal((grid.steps, dim)) * np.sqrt(grid.dt)
    vals = np.zeros((grid.steps + 1, dim))
    np.cumsum(inc, axis=0, out=vals[1:])
    return SamplePath(grid, vals)


@dataclass(frozen=True)
class DecomposedPath:
    """A path together with its known martingale part; the remainder
    path - path_0 - martingale_part is the candidate orthogonal part."""

    path: SamplePath
    martingale_part: SamplePath

    def __post_init__(self) -> None:
        if self.path.grid != self.martingale_part.grid:
            raise ValueError("path and martingale part must share one grid")
        if self.path.dim != self.martingale_part.dim:
            raise ValueError("dimension mismatch")
        if np.any(self.martingale_part.values[0] != 0.0):
            raise ValueError("martingale part must start at 0")

    def orthogonal_part(self) -> SamplePath:
        vals = self.path.values - self.path.values[0] - self.martingale_part.values
        return SamplePath(self.path.grid, vals)


# ---------------------------------------------------------------------------
# coefficient plumbing
#
# Drift coefficients may return a scalar, (d,), (n,) for d=1, or (n, d);
# volatility coefficients a scalar (isotropic), (d, d), (n,) for d=1, or
# (n, d, d).  Everything is applied row-wise over n particles.
# ---------------------------------------------------------------------------


def as_drift(out, n: int, d: int) -> np.ndarray:
    arr = np.asarray(out, dtype=float)
    if arr.ndim == 0:
        return np.full((n, d), float(arr))
    if arr.shape == (d,):
        return np.broadcast_to(arr, (n, d))
    if d == 1 and arr.shape == (n,):
        return arr[:, None]
    if arr.shape == (n, d):
        return arr
    raise CoefficientError(f"drift output shape {arr.shape} not usable for n={n}, d={d}")


def mat_vec(out, vec: np.ndarray, n: int, d: int) -> np.ndarray:
    """Row-wise sigma(x_i) @ v_i for a volatility output in any accepted shape."""
    arr = np.asarray(out, dtype=float)
    if d == 1:
        if arr.ndim == 0:
            return arr * vec
        if arr.shape == (n,):
            return arr[:, None] * vec
        if arr.shape == (1, 1):
            return arr[0, 0] * vec
        if arr.shape == (n, 1, 1):
            return arr[:, :, 0] * vec
        raise CoefficientError(f"volatility output shape {arr.shape} not usable for d=1")
    if arr.ndim == 0:
        return arr * vec
    if arr.shape == (d, d):
        return vec @ arr.T
    if arr.shape == (n, d, d):
        return np.einsum("nij,nj->ni", arr, vec)
    raise CoefficientError(f"volatility output shape {arr.shape} not usable for n={n}, d={d}")


def mat_t_vec(out, vec: np.ndarray, n: int, d: int) -> np.ndarray:
    """Row-wise sigma(x_i)^T @ v_i."""
    arr = np.asarray(out, dtype=float)
    if d == 1:
        return mat_vec(arr, vec, n, d)
    if arr.ndim == 0:
        return arr * vec
    if arr.shape == (d, d):
        return vec @ arr
    if arr.shape == (n, d, d):
        return np.einsum("nji,nj->ni", arr, vec)
    raise CoefficientError(f"volatility output shape {arr.shape} not usable for n={n}, d={d}")


def as_matrix(out, n: int, d: int) -> np.ndarray:
    """Normalize a volatility output to one (n, d, d) array."""
    arr = np.asarray(out, dtype=float)
    eye = np.eye(d)
    if arr.ndim == 0:
        return np.broadcast_to(arr * eye, (n, d, d))
    if arr.shape == (n,) and d == 1:
        return arr[:, None, None]
    if arr.shape == (d, d):
        return np.broadcast_to(arr, (n, d, d))
    if arr.shape == (n, d, d):
        return arr
    raise CoefficientError(f"volatility output shape {arr.shape} not usable for n={n}, d={d}")


@dataclass(frozen=True)
class SemimartingaleSpec:
    """Measure-free dynamics dX = a(t, X) dt + sigma(t, X) dW + sigma0(t, X) dW0.

    Coefficients must be bounded and Lipschitz in x uniformly in t (caller
    contract); each Euler step additionally checks finiteness of the sampled
    evaluations and aborts with the offending (t, x) on failure.
    """

    drift: Callable[[float, np.ndarray], object]
    sigma: Callable[[float, np.ndarray], object]
    sigma0: Callable[[float, np.ndarray], object]
    x0: Callable[[np.random.Generator, int], np.ndarray]
    dim: int = 1

    def sample_x0(self, gen: np.random.Generator, n: int) -> np.ndarray:
        arr = np.asarray(self.x0(gen, n), dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.shape != (n, self.dim):
            raise ValueError(f"x0 sampler returned shape {arr.shape}, wanted {(n, self.dim)}")
        if not np.isfinite(arr).all():
            raise ValueError("x0 sampler produced non-finite values")
        return arr


def _check_step(x: np.ndarray, t: float) -> None:
    if not np.isfinite(x).all():
        bad = np.argwhere(~np.isfinite(x))[0]
        raise CoefficientError(
            f"non-finite state while stepping: t={t!r}, particle={int(bad[0])}, "
            f"state={x[bad[0]]}"
        )


def euler_paths(
    drift_at: Callable[[float, np.ndarray, EmpiricalMeasure | None], object],
    sigma_at: Callable[[float, np.ndarray, EmpiricalMeasure | None], object],
    sigma0_at: Callable[[float, np.ndarray, EmpiricalMeasure | None], object],
    grid: TimeGrid,
    x0: np.ndarray,
    dw: np.ndarray,
    dw0: np.ndarray,
    with_measure: bool = False,
    with_parts: bool = True,
) -> tuple[np.ndarray, np.ndarray | None, np.ndarray | None, np.ndarray | None]:
    """Left-point Euler scheme for n paths sharing the common increments dw0.

    x0: (n, d); dw: (n, K, d); dw0: (K, d).  When `with_measure` is set the
    coefficients receive the step-k empirical law of the states (explicit
    interaction lag).  Returns (states, a_part, m_part, c_part), each of
    shape (n, K + 1, d); the parts are None when `with_parts` is off.
    """
    n, d = x0.shape
    steps = grid.steps
    dt = grid.dt
    nodes = grid.nodes
    states = np.empty((n, steps + 1, d))
    a_part = np.zeros((n, steps + 1, d)) if with_parts else None
    m_part = np.zeros((n, steps + 1, d)) if with_parts else None
    c_part = np.zeros((n, steps + 1, d)) if with_parts else None
    states[:, 0] = x0
    for k in range(steps):
        t = float(nodes[k])
        x = states[:, k]
        mu = bare_measure(x) if with_measure else None
        a_out = drift_at(t, x, mu)
        # scalar drift broadcasts; keeps the zero-drift case allocation-free
        da = float(a_out) * dt if np.ndim(a_out) == 0 else as_drift(a_out, n, d) * dt
        dm = mat_vec(sigma_at(t, x, mu), dw[:, k], n, d)
        dc = mat_vec(sigma0_at(t, x, mu), np.broadcast_to(dw0[k], (n, d)), n, d)
        x_next = x + da + dm + dc
        _check_step(x_next, t)
        states[:, k + 1] = x_next
        if with_parts:
            a_part[:, k + 1] = a_part[:, k] + da
            m_part[:, k + 1] = m_part[:, k] + dm
            c_part[:, k + 1] = c_part[:, k] + dc
    return states, a_part, m_part, c_part


def build_semimartingale(
    spec: SemimartingaleSpec,
    grid: TimeGrid,
    w: SamplePath,
    w0: SamplePath,
    x0,
) -> tuple[SamplePath, dict[str, SamplePath]]:
    """One Euler path X and its decomposition parts {A, M, C}."""
    if w.grid != grid or w0.grid != grid:
        raise ValueError("drivers must live on the evolution grid")
    d = spec.dim
    if w.dim != d or w0.dim != d:
        raise ValueError("driver dimension must match the spec dimension")
    x0_arr = np.atleast_1d(np.asarray(x0, dtype=float)).reshape(1, d)
    if not np.isfinite(x0_arr).all():
        raise ValueError("x0 must be finite")
    states, a_part, m_part, c_part = euler_paths(
        lambda t, x, _mu: spec.drift(t, x),
        lambda t, x, _mu: spec.sigma(t, x),
        lambda t, x, _mu: spec.sigma0(t, x),
        grid,
        x0_arr,
        w.increments()[None, :, :],
        w0.increments(),
    )
    parts = {
        "A": SamplePath(grid, a_part[0]),
        "M": SamplePath(grid, m_part[0]),
        "C": SamplePath(grid, c_part[0]),
    }
    return SamplePath(grid, states[0]), parts
