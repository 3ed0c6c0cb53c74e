"""Conditional particle systems: N particles driven by one shared common-noise
path plus independent idiosyncratic noises.

The shared path plays the role of the conditioning information, so the
conditional law at a node is the cross-particle atom cloud, and conditional
expectations are plain particle averages (computed with an order-independent
exact sum, so permuting particles changes nothing).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .grids import SamplePath, SemimartingaleSpec, TimeGrid, as_matrix, euler_paths, mat_vec
from .measures import EmpiricalMeasure
from .rng import RngKey


@dataclass(frozen=True)
class McKeanVlasovSpec:
    """Dynamics whose coefficients also see the current conditional law:
    dX = a(t, X, mu) dt + sigma(t, X, mu) dW + sigma0(t, X, mu) dW0."""

    drift: Callable[[float, np.ndarray, EmpiricalMeasure], object]
    sigma: Callable[[float, np.ndarray, EmpiricalMeasure], object]
    sigma0: Callable[[float, np.ndarray, EmpiricalMeasure], object]
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


@dataclass(frozen=True)
class ParticleEnsemble:
    """States of N particles at every node, with the drivers that produced them.

    All particles share `common`; each particle i has its own idiosyncratic
    Brownian path `idio[i]` drawn from the stream (seed, replication, i, "idio").
    """

    grid: TimeGrid
    spec: SemimartingaleSpec | McKeanVlasovSpec
    key: RngKey
    states: np.ndarray  # (n, steps + 1, d)
    common: SamplePath
    idio: np.ndarray  # (n, steps + 1, d)

    def __post_init__(self) -> None:
        # freeze in place: construction sites own these arrays exclusively
        for name in ("states", "idio"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def n_particles(self) -> int:
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[2]

    def common_increments(self) -> np.ndarray:
        return self.common.increments()

    def particle_path(self, index: int) -> SamplePath:
        return SamplePath(self.grid, self.states[index])

    def idio_path(self, index: int) -> SamplePath:
        return SamplePath(self.grid, self.idio[index])

    def write_csv(self, fp) -> None:
        fp.write("node,particle," + ",".join(f"x_{i + 1}" for i in range(self.dim)) + "\n")
        for k in range(self.grid.steps + 1):
            for i in range(self.n_particles):
                coords = ",".join(repr(float(v)) for v in self.states[i, k])
                fp.write(f"{k},{i},{coords}\n")


def idiosyncratic_increments(grid: TimeGrid, n: int, dim: int, key: RngKey, role: str = "idio") -> np.ndarray:
    """(n, K, d) Brownian increments, one keyed stream per particle."""
    out = np.empty((n, grid.steps, dim))
    scale = np.sqrt(grid.dt)
    for i in range(n):
        gen = key.part(i).tagged(role).generator()
        out[i] = gen.standard_normal((grid.steps, dim)) * scale
    return out


def common_increments(grid: TimeGrid, dim: int, key: RngKey, role: str = "common") -> np.ndarray:
    gen = key.part(0).tagged(role).generator()
    return gen.standard_normal((grid.steps, dim)) * np.sqrt(grid.dt)


def simulate_ensemble(
    spec: SemimartingaleSpec | McKeanVlasovSpec,
    grid: TimeGrid,
    n: int,
    key: RngKey,
) -> ParticleEnsemble:
    """Euler evolution of n particles; measure-dependent coefficients see the
    step-k empirical law of the ensemble itself (explicit interaction lag)."""
    if n < 2:
        raise ValueError("an ensemble needs at least 2 particles")
    d = spec.dim
    x0 = spec.sample_x0(key.part(0).tagged("x0").generator(), n)
    common_vals = np.zeros((grid.steps + 1, d))
    np.cumsum(common_increments(grid, d, key), axis=0, out=common_vals[1:])
    idio_vals = np.zeros((n, grid.steps + 1, d))
    np.cumsum(idiosyncratic_increments(grid, n, d, key), axis=1, out=idio_vals[:, 1:])
    # drive the evolution with increments of the stored paths, so the states
    # satisfy the Euler recursion exactly in terms of what the ensemble carries
    dw = np.diff(idio_vals, axis=1)
    dw0 = np.diff(common_vals, axis=0)
    with_measure = isinstance(spec, McKeanVlasovSpec)
    if with_measure:
        drift_at = spec.drift
        sigma_at = spec.sigma
        sigma0_at = spec.sigma0
    else:
        drift_at = lambda t, x, _mu: spec.drift(t, x)  # noqa: E731
        sigma_at = lambda t, x, _mu: spec.sigma(t, x)  # noqa: E731
        sigma0_at = lambda t, x, _mu: spec.sigma0(t, x)  # noqa: E731
    states, _, _, _ = euler_paths(
        drift_at, sigma_at, sigma0_at, grid, x0, dw, dw0, with_measure, with_parts=False
    )
    return ParticleEnsemble(
        grid=grid,
        spec=spec,
        key=key,
        states=states,
        common=SamplePath(grid, common_vals),
        idio=idio_vals,
    )


def conditional_law(ens: ParticleEnsemble, node: int) -> EmpiricalMeasure:
    """Atom cloud of the ensemble at one node: the conditional distribution
    given the shared common path."""
    if not 0 <= node <= ens.grid.steps:
        raise ValueError(f"node {node} outside grid")
    return EmpiricalMeasure(ens.states[:, node, :])


def conditional_law_flow(ens: ParticleEnsemble) -> list[EmpiricalMeasure]:
    return [conditional_law(ens, k) for k in range(ens.grid.steps + 1)]


def conditional_expectation(ens: ParticleEnsemble, xi):
    """Particle average of a per-particle statistic.

    xi is either a precomputed (n,) / (n, p) array or a callable receiving
    the full state array (n, steps + 1, d).  The average uses an exact
    (order-independent) sum, so it is invariant under particle permutations.
    """
    vals = np.asarray(xi(ens.states) if callable(xi) else xi, dtype=float)
    if vals.ndim == 0:
        vals = np.full(ens.n_particles, float(vals))
    if vals.shape[0] != ens.n_particles:
        raise ValueError(f"statistic must be per-particle, got shape {vals.shape}")
    if not np.isfinite(vals).all():
        raise ValueError("statistic produced non-finite values")
    if vals.ndim == 1:
        return math.fsum(vals) / ens.n_particles
    flat = vals.reshape(ens.n_particles, -1)
    out = np.array([math.fsum(flat[:, j]) for j in range(flat.shape[1])]) / ens.n_particles
    return out.reshape(vals.shape[1:])


def conditional_kernel(ens: ParticleEnsemble, node: int, g: Callable[[object, np.ndarray], np.ndarray]):
    """Lazy map y -> (1/n) sum_i g(y, X^i at node); g vectorized over atoms."""
    atoms = ens.states[:, node, :]

    def kernel(y):
        vals = np.asarray(g(y, atoms), dtype=float)
        if vals.ndim == 0:
            if not np.isfinite(vals):
                raise ValueError("kernel integrand non-finite")
            return float(vals)
        if vals.shape[0] != atoms.shape[0]:
            raise ValueError(f"kernel integrand must be per-atom, got shape {vals.shape}")
        if not np.isfinite(vals).all():
            raise ValueError("kernel integrand non-finite")
        out = vals.mean(axis=0)
        return float(out) if out.ndim == 0 else out

    return kernel


def idiosyncratic_martingale(ens: ParticleEnsemble) -> np.ndarray:
    """Per-particle path of the idiosyncratic martingale part
    int sigma(t, X) dW, recomputed from the stored drivers; (n, steps+1, d)."""
    n, _, d = ens.states.shape
    grid = ens.grid
    nodes = grid.nodes
    dw = np.diff(ens.idio, axis=1)
    out = np.zeros((n, grid.steps + 1, d))
    with_measure = isinstance(ens.spec, McKeanVlasovSpec)
    for k in range(grid.steps):
        t = float(nodes[k])
        x = ens.states[:, k]
        if with_measure:
            sig = ens.spec.sigma(t, x, EmpiricalMeasure(x))
        else:
            sig = ens.spec.sigma(t, x)
        out[:, k + 1] = out[:, k] + mat_vec(sig, dw[:, k], n, d)
    return out


def diffusion_matrices(ens: ParticleEnsemble, node: int) -> tuple[np.ndarray, np.ndarray]:
    """(sigma sigma^T, sigma0 sigma0^T) at one node, each (n, d, d)."""
    n, _, d = ens.states.shape
    t = float(ens.grid.nodes[node])
    x = ens.states[:, node]
    if isinstance(ens.spec, McKeanVlasovSpec):
        mu = EmpiricalMeasure(x)
        sig = as_matrix(ens.spec.sigma(t, x, mu), n, d)
        sig0 = as_matrix(ens.spec.sigma0(t, x, mu), n, d)
    else:
        sig = as_matrix(ens.spec.sigma(t, x), n, d)
        sig0 = as_matrix(ens.spec.sigma0(t, x), n, d)
    return np.einsum("nij,nkj->nik", sig, sig), np.einsum("nij,nkj->nik", sig0, sig0)
