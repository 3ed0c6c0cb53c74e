"""Assembly and verification of the martingale-integral decomposition

    F(t, Y_t, m_t) = F(0, Y_0, m_0) + int D_y F . dM^Y
                     + int E[ D_m F(s, ., m_s, X_s) sigma0_s | common ](Y_s) dM0_s
                     + Gamma_t,

where m is the conditional law flow of a particle ensemble and Gamma, the
residual, should carry no covariation against any martingale of the scenario.
Every integral is a left-point sum; mixing sampling rules would push an O(dt)
bias into Gamma asymmetrically.

For twice-differentiable cylindrical functionals the residual has a closed
form (drift pairing, diffusion trace, and pair term), integrated here along
the ensemble's conditional laws as an independent oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import IO, Callable, Sequence

import numpy as np

from .functionals import CylindricalFunctional, build_functional
from .grids import (
    DecomposedPath,
    SamplePath,
    SemimartingaleSpec,
    TimeGrid,
    as_drift,
    as_matrix,
    mat_t_vec,
    sample_brownian,
    zero_path,
)
from .measures import bare_measure
from .particles import (
    McKeanVlasovSpec,
    ParticleEnsemble,
    conditional_kernel,
    simulate_ensemble,
)
from .regularization import ConvergenceReport, orthogonality_test
from .registry import RegistryError, build_coefficient, build_initial_law
from .rng import RngKey, pmap


@dataclass(frozen=True)
class ItoDecomposition:
    """Node-by-node paths of the functional and its three components; the
    residual is defined by subtraction, so the additive identity is exact."""

    grid: TimeGrid
    f_path: np.ndarray
    martingale_y: np.ndarray
    martingale_common: np.ndarray
    residual: np.ndarray

    def identity_gap(self) -> float:
        recon = self.f_path[0] + self.martingale_y + self.martingale_common + self.residual
        return float(np.max(np.abs(self.f_path - recon)))

    def residual_path(self) -> SamplePath:
        return SamplePath(self.grid, self.residual)

    def write_csv(self, fp: IO[str]) -> None:
        fp.write("t,F,I_Y,I_common,Gamma\n")
        for t, f, iy, ic, g in zip(
            self.grid.nodes, self.f_path, self.martingale_y, self.martingale_common, self.residual
        ):
            fp.write(",".join(repr(float(v)) for v in (t, f, iy, ic, g)) + "\n")


def functional_mean_path(functional: CylindricalFunctional, ens: ParticleEnsemble) -> np.ndarray:
    """z-path of the ensemble: (steps + 1, J) with z[k, j] = m_k(phi_j)."""
    cols = []
    for tf in functional.tests:
        vals = np.asarray(tf.value(ens.states), dtype=float)  # (n, steps + 1)
        if not np.isfinite(vals).all():
            raise ValueError(f"test function {tf.name} non-finite on the ensemble")
        cols.append(vals.mean(axis=0))
    return np.stack(cols, axis=1)


def assemble(
    functional: CylindricalFunctional,
    y: DecomposedPath | None,
    ens: ParticleEnsemble,
    sigma0: Callable | None = None,
    z_path: np.ndarray | None = None,
) -> ItoDecomposition:
    """Left-point assembly of the decomposition along one ensemble.

    y carries the evaluation path and its known martingale part; pass None
    for a functional evaluated at y = 0.  sigma0 defaults to the ensemble's
    own common-noise coefficient; z_path may carry a precomputed
    functional_mean_path."""
    grid = ens.grid
    d = ens.dim
    bad = [tf.name for tf in functional.tests if tf.growth not in ("bounded", "linear", "quadratic")]
    if bad:
        raise ValueError(f"growth certificate failure for test functions {bad}")
    if y is None:
        y = DecomposedPath(zero_path(grid, d), zero_path(grid, d))
    if y.path.grid != grid:
        raise ValueError("y must live on the ensemble grid")

    spec = ens.spec
    if sigma0 is None:
        if isinstance(spec, McKeanVlasovSpec):
            sigma0_at = spec.sigma0
        else:
            sigma0_at = lambda t, x, _mu: spec.sigma0(t, x)  # noqa: E731
    else:
        sigma0_at = lambda t, x, _mu: sigma0(t, x)  # noqa: E731

    nodes = grid.nodes
    steps = grid.steps
    if z_path is None:
        z_path = functional_mean_path(functional, ens)
    y_vals = y.path.values
    dmy = y.martingale_part.increments()
    dw0 = ens.common_increments()

    f_path = np.array(
        [functional.value_at_z(float(nodes[k]), y_vals[k], z_path[k]) for k in range(steps + 1)]
    )
    i_y = np.zeros(steps + 1)
    i_common = np.zeros(steps + 1)
    for k in range(steps):
        t = float(nodes[k])
        z_k = z_path[k]
        dy_f = np.asarray(functional.df_dy(t, y_vals[k], z_k), dtype=float)
        i_y[k + 1] = i_y[k] + float(dy_f @ dmy[k])

        def integrand(yy, atoms, _t=t, _z=z_k):
            mu = bare_measure(atoms)
            dm = functional.lions_at_z(_t, yy, _z, atoms)
            if dm.ndim == 1:
                dm = dm[:, None]
            return mat_t_vec(sigma0_at(_t, atoms, mu), dm, atoms.shape[0], atoms.shape[1])

        kernel_val = np.atleast_1d(conditional_kernel(ens, k, integrand)(y_vals[k]))
        i_common[k + 1] = i_common[k] + float(kernel_val @ dw0[k])

    residual = f_path - f_path[0] - i_y - i_common
    return ItoDecomposition(
        grid=grid, f_path=f_path, martingale_y=i_y, martingale_common=i_common, residual=residual
    )


def corrupt_common_integral(dec: ItoDecomposition, factor: float = 0.5) -> ItoDecomposition:
    """Debug helper: scale the common-noise integral and push the defect into
    the residual (negative control for the orthogonality verdict)."""
    broken = factor * dec.martingale_common
    residual = dec.f_path - dec.f_path[0] - dec.martingale_y - broken
    return replace(dec, martingale_common=broken, residual=residual)


def c2_gamma_oracle(
    functional: CylindricalFunctional,
    ens: ParticleEnsemble,
    spec: SemimartingaleSpec | McKeanVlasovSpec | None = None,
    z_path: np.ndarray | None = None,
) -> SamplePath:
    """Closed-form residual for twice-differentiable functionals without
    y-dependence, integrated left-point along the conditional law flow:

    Gamma_t = int_0^t [ dF/dt + m(D_m F . a) + (1/2) m(tr(Dx D_m F (ss^T + s0 s0^T)))
                        + (1/2) sum_jk d2f_jk u_j . u_k ] ds,
    with u_j = m(sigma0^T phi_j').
    """
    if functional.depends_on_y:
        raise ValueError("the closed-form residual applies to y-independent functionals only")
    if functional.d2f_dz2 is None or any(tf.hess is None for tf in functional.tests):
        raise ValueError(f"{functional.name}: second derivatives unavailable")
    spec = spec if spec is not None else ens.spec
    with_measure = isinstance(spec, McKeanVlasovSpec)
    grid = ens.grid
    n, _, d = ens.states.shape
    nodes = grid.nodes
    y0 = np.zeros(d)
    if z_path is None:
        z_path = functional_mean_path(functional, ens)
    psi = np.zeros(grid.steps)
    for k in range(grid.steps):
        t = float(nodes[k])
        x = ens.states[:, k]
        z = z_path[k]
        mu = bare_measure(x) if with_measure else None
        a_out = spec.drift(t, x, mu) if with_measure else spec.drift(t, x)
        a = as_drift(a_out, n, d)
        dm = functional.lions_at_z(t, y0, z, x)
        if dm.ndim == 1:
            dm = dm[:, None]
        drift_term = float(np.mean(np.sum(dm * a, axis=1)))

        s_out = spec.sigma(t, x, mu) if with_measure else spec.sigma(t, x)
        s0_out = spec.sigma0(t, x, mu) if with_measure else spec.sigma0(t, x)
        hess = functional.x_grad_lions_at_z(t, y0, z, x)  # (n, d, d)
        if d == 1 and np.ndim(s_out) == 0 and np.ndim(s0_out) == 0:
            cov = float(s_out) ** 2 + float(s0_out) ** 2
            trace_term = 0.5 * cov * float(np.mean(hess[:, 0, 0]))
        else:
            sig = as_matrix(s_out, n, d)
            sig0 = as_matrix(s0_out, n, d)
            cov = np.einsum("nij,nkj->nik", sig, sig) + np.einsum("nij,nkj->nik", sig0, sig0)
            trace_term = 0.5 * float(np.mean(np.einsum("nij,nji->n", hess, cov)))

        grads = np.stack(
            [mat_t_vec(s0_out, np.asarray(tf.grad(x), float).reshape(n, d), n, d).mean(axis=0)
             for tf in functional.tests]
        )  # (J, d)
        d2 = np.asarray(functional.d2f_dz2(t, y0, z), dtype=float)
        pair_term = 0.5 * float(np.einsum("jk,jp,kp->", d2, grads, grads))

        psi[k] = float(functional.df_dt(t, y0, z)) + drift_term + trace_term + pair_term
    vals = np.zeros(grid.steps + 1)
    np.cumsum(psi * grid.dt, out=vals[1:])
    return SamplePath(grid, vals)


# ---------------------------------------------------------------------------
# scenarios
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ItoScenario:
    """One named verification setup: a functional, ensemble dynamics, and the
    evaluation path mode ('zero' or 'brownian')."""

    name: str
    functional: CylindricalFunctional
    spec: SemimartingaleSpec
    grid: TimeGrid
    n_particles: int
    y_mode: str = "zero"
    corrupt_factor: float | None = None

    def __post_init__(self) -> None:
        if self.y_mode not in ("zero", "brownian"):
            raise ValueError(f"unknown y_mode {self.y_mode!r}")

    def sample(self, key: RngKey) -> "ItoRun":
        ens = simulate_ensemble(self.spec, self.grid, self.n_particles, key)
        if self.y_mode == "brownian":
            w_y = sample_brownian(self.grid, self.spec.dim, key.part(0).tagged("ypath"))
            y = DecomposedPath(w_y, w_y)
        else:
            y = None
        z_path = functional_mean_path(self.functional, ens)
        dec = assemble(self.functional, y, ens, z_path=z_path)
        if self.corrupt_factor is not None:
            dec = corrupt_common_integral(dec, self.corrupt_factor)
        battery = {
            "W": ens.idio_path(0),
            "W_common": ens.common,
        }
        if y is not None:
            battery["Y"] = y.path
        return ItoRun(scenario=self, ensemble=ens, y=y, decomposition=dec, battery=battery, z_path=z_path)

    def gamma_sampler(self):
        def sampler(rep_key: RngKey):
            run = self.sample(rep_key)
            return run.decomposition.residual_path(), run.battery

        return sampler


@dataclass(frozen=True)
class ItoRun:
    scenario: ItoScenario
    ensemble: ParticleEnsemble
    y: DecomposedPath | None
    decomposition: ItoDecomposition
    battery: dict[str, SamplePath]
    z_path: np.ndarray | None = None

    def oracle_gap_at_horizon(self) -> float:
        oracle = c2_gamma_oracle(self.scenario.functional, self.ensemble, z_path=self.z_path)
        return float(abs(self.decomposition.residual[-1] - oracle.values[-1, 0]))


def gamma_orthogonality(
    scenario: ItoScenario,
    eps_ladder: Sequence[float],
    replications: int,
    key: RngKey,
    theta: float = 0.05,
    threads: int = 1,
) -> ConvergenceReport:
    """Ladder verdict on the residual's covariation against the scenario
    battery, across independent replications."""
    return orthogonality_test(
        scenario.gamma_sampler(), eps_ladder, replications, key, theta=theta, threads=threads
    )


def residual_sup_stats(
    scenario: ItoScenario, replications: int, key: RngKey, threads: int = 1
) -> np.ndarray:
    """Per-replication sup_t |Gamma_t|."""
    def one(rep: int) -> float:
        run = scenario.sample(key.rep(rep))
        return float(np.max(np.abs(run.decomposition.residual)))

    return np.array(pmap(one, range(replications), threads))


def oracle_gap_stats(
    scenario: ItoScenario, replications: int, key: RngKey, threads: int = 1
) -> np.ndarray:
    """Per-replication |Gamma_T - oracle Gamma_T|."""
    def one(rep: int) -> float:
        return scenario.sample(key.rep(rep)).oracle_gap_at_horizon()

    return np.array(pmap(one, range(replications), threads))


# named scenario table: functional tag plus coefficient tags resolved through
# the registry; every coefficient must be bounded.
SCENARIO_TABLE: dict[str, dict[str, str]] = {
    "mean/commonnoise": {
        "functional": "mean",
        "drift": "zero",
        "sigma": "zero",
        "sigma_common": "const:1.0",
        "x0": "gauss:0.0,1.0",
        "y_mode": "zero",
    },
    "mean/idio": {
        "functional": "mean",
        "drift": "zero",
        "sigma": "const:1.0",
        "sigma_common": "zero",
        "x0": "gauss:0.0,1.0",
        "y_mode": "zero",
    },
    "secondmoment/commonnoise": {
        "functional": "second_moment",
        "drift": "zero",
        "sigma": "zero",
        "sigma_common": "const:1.0",
        "x0": "gauss:0.0,1.0",
        "y_mode": "zero",
    },
    "secondmoment/idio": {
        "functional": "second_moment",
        "drift": "zero",
        "sigma": "const:1.0",
        "sigma_common": "zero",
        "x0": "gauss:0.0,1.0",
        "y_mode": "zero",
    },
    "secondmoment/mixed": {
        "functional": "second_moment",
        "drift": "zero",
        "sigma": "const:1.0",
        "sigma_common": "const:1.0",
        "x0": "gauss:0.0,1.0",
        "y_mode": "zero",
    },
    "meansquared/commonnoise": {
        "functional": "mean_squared",
        "drift": "zero",
        "sigma": "zero",
        "sigma_common": "const:1.0",
        "x0": "gauss:0.0,1.0",
        "y_mode": "zero",
    },
    "ymix/commonnoise": {
        "functional": "ty_mix",
        "drift": "zero",
        "sigma": "zero",
        "sigma_common": "const:1.0",
        "x0": "gauss:0.0,1.0",
        "y_mode": "brownian",
    },
}


def standard_scenario(
    name: str,
    grid: TimeGrid,
    n_particles: int,
    overrides: dict[str, str] | None = None,
    corrupt_factor: float | None = None,
) -> ItoScenario:
    """Build a named scenario, optionally overriding its registry tags."""
    if name not in SCENARIO_TABLE:
        raise RegistryError(f"unknown scenario {name!r}; known: {sorted(SCENARIO_TABLE)}")
    entry = dict(SCENARIO_TABLE[name])
    entry.update(overrides or {})
    func_name, _, func_rest = entry["functional"].partition(":")
    func_params = tuple(float(p) for p in func_rest.split(",")) if func_rest else ()
    functional = build_functional(func_name, func_params)
    spec = SemimartingaleSpec(
        drift=build_coefficient(entry["drift"], require_bounded=True).fn,
        sigma=build_coefficient(entry["sigma"], require_bounded=True).fn,
        sigma0=build_coefficient(entry["sigma_common"], require_bounded=True).fn,
        x0=build_initial_law(entry["x0"]),
        dim=1,
    )
    return ItoScenario(
        name=name,
        functional=functional,
        spec=spec,
        grid=grid,
        n_particles=n_particles,
        y_mode=entry["y_mode"],
        corrupt_factor=corrupt_factor,
    )
