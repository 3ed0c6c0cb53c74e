import io

import numpy as np
import pytest

from measureflow import (
    EmpiricalMeasure,
    McKeanVlasovSpec,
    RngKey,
    SemimartingaleSpec,
    build_functional,
    conditional_expectation,
    conditional_kernel,
    conditional_law,
    conditional_law_flow,
    flow_continuity_profile,
    integrate,
    linear_growth_certificate,
    make_grid,
    simulate_ensemble,
)
from measureflow.particles import idiosyncratic_martingale

SEED = 20250810


def spec_free(a=0.0, sigma=0.0, sigma0=0.0, x0=None):
    return SemimartingaleSpec(
        drift=lambda t, x: a,
        sigma=lambda t, x: sigma,
        sigma0=lambda t, x: sigma0,
        x0=x0 or (lambda gen, n: np.zeros((n, 1))),
        dim=1,
    )


def test_ensemble_determinism():
    grid = make_grid(1.0, 32)
    key = RngKey(SEED, replication=5)
    a = simulate_ensemble(spec_free(sigma=1.0, sigma0=0.5), grid, 16, key)
    b = simulate_ensemble(spec_free(sigma=1.0, sigma0=0.5), grid, 16, key)
    assert np.array_equal(a.states, b.states)
    assert np.array_equal(a.common.values, b.common.values)


def test_pure_common_noise_collapses_particles():
    grid = make_grid(1.0, 64)
    ens = simulate_ensemble(spec_free(sigma0=1.0), grid, 8, RngKey(SEED))
    for i in range(ens.n_particles):
        assert np.array_equal(ens.states[i], ens.common.values)


def test_conditional_mean_clt():
    grid = make_grid(1.0, 16)
    ens = simulate_ensemble(spec_free(sigma=1.0), grid, 10_000, RngKey(SEED, role="clt"))
    mean_t = conditional_expectation(ens, lambda s: s[:, -1, 0])
    assert abs(mean_t) <= 3.0 * np.sqrt(grid.horizon) / np.sqrt(ens.n_particles)


def test_exchangeability_exact():
    grid = make_grid(1.0, 16)
    ens = simulate_ensemble(spec_free(sigma=1.0, sigma0=0.5), grid, 64, RngKey(SEED))
    stat = lambda s: s[:, -1, 0] ** 2  # noqa: E731
    base = conditional_expectation(ens, stat)
    perm = np.random.default_rng(0).permutation(ens.n_particles)
    permuted = conditional_expectation(ens, stat(ens.states)[perm])
    assert permuted == base  # exact: order-independent summation
    atoms = conditional_law(ens, grid.steps).atoms
    assert np.array_equal(np.sort(atoms[perm], axis=0), np.sort(atoms, axis=0))


def test_conditional_expectation_constant_and_guard():
    grid = make_grid(1.0, 4)
    ens = simulate_ensemble(spec_free(sigma=1.0), grid, 8, RngKey(SEED))
    assert conditional_expectation(ens, np.full(8, 2.5)) == 2.5
    with pytest.raises(ValueError):
        conditional_expectation(ens, np.zeros(3))
    with pytest.raises(ValueError):
        conditional_expectation(ens, np.full(8, np.nan))


def test_martingale_increment_averages():
    # per-node conditional means of idiosyncratic martingale increments are
    # centered with std sqrt(dt / n)
    grid = make_grid(1.0, 64)
    n = 10_000
    ens = simulate_ensemble(spec_free(sigma=1.0), grid, n, RngKey(SEED, role="mart"))
    m = idiosyncratic_martingale(ens)
    inc_means = np.array(
        [conditional_expectation(ens, m[:, k + 1, 0] - m[:, k, 0]) for k in range(grid.steps)]
    )
    scale = np.sqrt(grid.dt / n)
    assert np.max(np.abs(inc_means)) <= 4.0 * scale
    rms = np.sqrt(np.mean(inc_means**2))
    assert 0.5 * scale <= rms <= 2.0 * scale


def test_conditional_isometry():
    # E[(M_t - M_s)^2 | common] vs E[[M]_t - [M]_s | common]
    grid = make_grid(1.0, 32)
    n = 10_000
    sigma = 1.3
    ens = simulate_ensemble(spec_free(sigma=sigma), grid, n, RngKey(SEED, role="iso"))
    m = idiosyncratic_martingale(ens)
    k_lo, k_hi = 8, 32
    t_gap = grid.nodes[k_hi] - grid.nodes[k_lo]
    sq = conditional_expectation(ens, (m[:, k_hi, 0] - m[:, k_lo, 0]) ** 2)
    bracket = sigma**2 * t_gap  # deterministic for constant sigma
    spread = np.sqrt(2.0) * bracket
    assert abs(sq - bracket) <= 3.0 * spread / np.sqrt(n)


def test_conditional_law_examples():
    grid = make_grid(1.0, 8)
    degenerate = simulate_ensemble(spec_free(sigma0=1.0), grid, 8, RngKey(SEED))
    cloud = conditional_law(degenerate, 3)
    assert np.all(cloud.atoms == cloud.atoms[0])
    dirac = simulate_ensemble(
        spec_free(sigma=1.0, x0=lambda gen, n: np.full((n, 1), 2.0)), grid, 8, RngKey(SEED)
    )
    assert np.all(conditional_law(dirac, 0).atoms == 2.0)
    with pytest.raises(ValueError):
        conditional_law(dirac, 99)


def test_conditional_kernel_examples():
    grid = make_grid(1.0, 8)
    ens = simulate_ensemble(spec_free(sigma0=1.0), grid, 8, RngKey(SEED, role="kern"))
    k = grid.steps
    kernel = conditional_kernel(ens, k, lambda y, x: np.full(x.shape[0], y))
    assert kernel(3.5) == pytest.approx(3.5)
    kernel_x = conditional_kernel(ens, k, lambda y, x: x[:, 0])
    assert kernel_x(0.0) == pytest.approx(ens.common.values[k, 0])
    kernel_yx = conditional_kernel(ens, k, lambda y, x: y * x[:, 0])
    y = 2.0
    closed = y * float(np.mean(ens.states[:, k, 0]))
    assert kernel_yx(y) == pytest.approx(closed, abs=1e-12)


def test_mckean_vlasov_interaction():
    # mean reversion towards the conditional mean keeps the cloud together
    grid = make_grid(1.0, 64)
    spec = McKeanVlasovSpec(
        drift=lambda t, x, mu: 4.0 * (mu.atoms[:, 0].mean() - x[:, 0])[:, None],
        sigma=lambda t, x, mu: 1.0,
        sigma0=lambda t, x, mu: 0.0,
        x0=lambda gen, n: gen.standard_normal((n, 1)) * 2.0,
    )
    key = RngKey(SEED, role="mkv")
    ens = simulate_ensemble(spec, grid, 512, key)
    ens2 = simulate_ensemble(spec, grid, 512, key)
    assert np.array_equal(ens.states, ens2.states)
    spread0 = conditional_law(ens, 0).atoms.std()
    spread_t = conditional_law(ens, grid.steps).atoms.std()
    assert spread_t < spread0  # contraction towards the mean


def test_euler_recursion_exact_per_particle():
    grid = make_grid(1.0, 16)
    spec = spec_free(a=0.5, sigma=1.0, sigma0=0.7)
    ens = simulate_ensemble(spec, grid, 8, RngKey(SEED, role="rec"))
    dw = np.diff(ens.idio, axis=1)
    dw0 = np.diff(ens.common.values, axis=0)
    for k in range(grid.steps):
        # same left-to-right grouping as the Euler step
        expect = ens.states[:, k] + 0.5 * grid.dt + 1.0 * dw[:, k] + 0.7 * dw0[k]
        assert np.array_equal(ens.states[:, k + 1], expect)


def test_n_doubling_convergence():
    # with the common path fixed, empirical statistics converge as n grows:
    # halving the error when n quadruples, ~sqrt(2) when it doubles
    grid = make_grid(1.0, 32)
    functional = build_functional("smooth_cdf", (0.0, 1.0))
    key = RngKey(SEED, role="ndouble")

    def stat(n, rep):
        ens = simulate_ensemble(spec_free(sigma=1.0, sigma0=1.0), grid, n, key.rep(rep))
        return functional.value(1.0, np.zeros(1), conditional_law(ens, grid.steps))

    reps = 24
    errors = {}
    for n in (250, 1000):
        errors[n] = np.array([abs(stat(n, r) - stat(4000, r)) for r in range(reps)])
    ratio = np.median(errors[250]) / np.median(errors[1000])
    assert 1.2 <= ratio <= 3.5  # sqrt(1000 / 250) = 2 up to sampling noise


def test_growth_surrogate_bound():
    # ensemble second moment of the Lions derivative against the certificate
    grid = make_grid(1.0, 16)
    ens = simulate_ensemble(spec_free(sigma=1.0, sigma0=1.0), grid, 256, RngKey(SEED, role="gr"))
    functional = build_functional("second_moment")
    radius = float(np.max(np.abs(ens.states)))
    cert = linear_growth_certificate(
        functional, RngKey(SEED, role="cert"), x_radius=radius + 1.0, measure_radius=radius + 1.0
    )
    mu = conditional_law(ens, grid.steps)
    dm = functional.lions_derivative(0.5, np.zeros(1), mu, mu.atoms)
    stat = float(np.mean(np.sum(dm**2, axis=1)))
    bound = 2.0 * cert.constant**2 * (1.0 + float(np.max(np.sum(mu.atoms**2, axis=1))))
    assert stat <= bound


def test_flow_continuity_scaling():
    # conditional-law flow of X = X0 + W + W0: profile entries shrink ~sqrt(2)
    # when the step is halved
    key = RngKey(SEED, role="flow")
    spec = spec_free(sigma=1.0, sigma0=1.0, x0=lambda gen, n: gen.standard_normal((n, 1)))
    medians = {}
    for steps in (32, 64):
        grid = make_grid(1.0, steps)
        entries = []
        for rep in range(8):
            ens = simulate_ensemble(spec, grid, 256, key.rep(rep))
            entries.append(flow_continuity_profile(conditional_law_flow(ens)))
        medians[steps] = np.median(np.concatenate(entries))
    ratio = medians[32] / medians[64]
    assert 1.2 <= ratio <= 1.8


def test_ensemble_csv_snapshot():
    grid = make_grid(1.0, 2)
    ens = simulate_ensemble(spec_free(sigma=1.0), grid, 3, RngKey(SEED))
    buf = io.StringIO()
    ens.write_csv(buf)
    lines = buf.getvalue().strip().splitlines()
    assert lines[0] == "node,particle,x_1"
    assert len(lines) == 1 + 3 * 3


def test_needs_two_particles():
    with pytest.raises(ValueError):
        simulate_ensemble(spec_free(), make_grid(1.0, 4), 1, RngKey(SEED))
