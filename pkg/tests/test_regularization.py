import numpy as np
import pytest

from measureflow import (
    DecomposedPath,
    RngKey,
    SamplePath,
    SemimartingaleSpec,
    build_semimartingale,
    deviation_report,
    make_grid,
    orthogonality_test,
    qcov,
    sample_brownian,
    sup_deviation,
    weak_dirichlet_check,
)
from measureflow.regularization import ConvergenceReport, eps_steps

SEED = 20250810
LADDER_SMALL = tuple(2.0**-p for p in range(4, 9))


def ramp(grid, slope=1.0):
    return SamplePath(grid, slope * grid.nodes[:, None])


def test_qcov_deterministic_ramp():
    # X = Y = t: (1/eps) int_0^t eps^2 dr = eps * t, exactly reproduced by the
    # left-point sum on a uniform grid
    grid = make_grid(1.0, 256)
    est = qcov(ramp(grid), ramp(grid), 0.25)
    j = np.searchsorted(est.times, 0.5)
    assert est.times[j] == 0.5
    assert abs(est.values[j] - 0.125) < 1e-3
    assert est.values[j] == pytest.approx(0.125, abs=1e-12)


def test_qcov_bilinear_and_symmetric():
    grid = make_grid(1.0, 128)
    key = RngKey(SEED, role="paths")
    x = sample_brownian(grid, 1, key.tagged("x"))
    x2 = sample_brownian(grid, 1, key.tagged("x2"))
    y = sample_brownian(grid, 1, key.tagged("y"))
    eps = 4 * grid.dt
    combo = SamplePath(grid, 2.0 * x.values + 3.0 * x2.values)
    lhs = qcov(combo, y, eps).values
    rhs = 2.0 * qcov(x, y, eps).values + 3.0 * qcov(x2, y, eps).values
    assert np.max(np.abs(lhs - rhs)) < 1e-12
    assert np.array_equal(qcov(x, y, eps).values, qcov(y, x, eps).values)


def test_qcov_guards():
    grid = make_grid(1.0, 64)
    other = make_grid(1.0, 32)
    key = RngKey(SEED, role="paths")
    x = sample_brownian(grid, 1, key)
    with pytest.raises(ValueError):
        qcov(x, sample_brownian(other, 1, key), 0.25)
    with pytest.raises(ValueError, match="multiple"):
        qcov(x, x, 0.013)
    with pytest.raises(ValueError, match="range"):
        qcov(x, x, 2.0)
    assert eps_steps(grid, 0.25) == 16


def test_qcov_restricted_to_valid_nodes():
    grid = make_grid(1.0, 64)
    x = sample_brownian(grid, 1, RngKey(SEED))
    est = qcov(x, x, 0.25)
    assert est.values.shape == (64 - 16 + 1,)
    assert est.times[-1] == pytest.approx(0.75)


def test_brownian_self_bracket_report():
    grid = make_grid(1.0, 1024)
    key = RngKey(SEED, role="bracket")

    def sampler(rep_key):
        w = sample_brownian(grid, 1, rep_key)
        return w, w, lambda t: t

    report = deviation_report(sampler, "W.W", (2.0**-4, 2.0**-5, 2.0**-6), 16, key)
    assert report.passed
    # medians shrink roughly like sqrt(eps); never grow beyond the factor
    assert np.all(np.diff(report.medians[0]) < 0.05)


def test_independent_brownians_report():
    grid = make_grid(1.0, 1024)
    key = RngKey(SEED, role="indep")

    def sampler(rep_key):
        a = sample_brownian(grid, 1, rep_key.tagged("a"))
        b = sample_brownian(grid, 1, rep_key.tagged("b"))
        return a, b, None

    report = deviation_report(sampler, "W.W2", (2.0**-4, 2.0**-5, 2.0**-6), 16, key)
    assert report.passed


def test_semimartingale_bracket_matches_integrated_rates():
    # qcov(X, X) against int (sigma^2 + sigma0^2) ds for bounded coefficients
    grid = make_grid(1.0, 2048)
    key = RngKey(SEED, role="semi")
    spec = SemimartingaleSpec(
        drift=lambda t, x: 0.3,
        sigma=lambda t, x: 1.2,
        sigma0=lambda t, x: 0.5,
        x0=lambda gen, n: np.zeros((n, 1)),
    )
    rate = 1.2**2 + 0.5**2

    def sampler(rep_key):
        w = sample_brownian(grid, 1, rep_key.tagged("w"))
        w0 = sample_brownian(grid, 1, rep_key.tagged("w0"))
        x, _ = build_semimartingale(spec, grid, w, w0, 0.0)
        return x, x, lambda t: rate * t

    report = deviation_report(
        sampler, "X.X", (2.0**-5, 2.0**-6, 2.0**-7), 16, key, theta=0.05 * rate
    )
    assert report.passed


def test_orthogonality_drift_vs_martingale_passes():
    grid = make_grid(1.0, 1024)
    key = RngKey(SEED, role="orth1")

    def sampler(rep_key):
        w = sample_brownian(grid, 1, rep_key)
        return ramp(grid), {"W": w}

    report = orthogonality_test(sampler, LADDER_SMALL[:3], 16, key)
    assert report.passed


def test_orthogonality_self_fails():
    grid = make_grid(1.0, 1024)
    key = RngKey(SEED, role="orth2")

    def sampler(rep_key):
        w = sample_brownian(grid, 1, rep_key)
        return w, {"W": w}

    report = orthogonality_test(sampler, LADDER_SMALL[:3], 16, key)
    assert not report.passed
    # statistic sits near the full bracket T, far above the threshold
    assert report.medians[0, -1] > 0.5


def test_orthogonality_zero_path_passes_with_zero_stats():
    grid = make_grid(1.0, 512)
    key = RngKey(SEED, role="orth3")

    def sampler(rep_key):
        w = sample_brownian(grid, 1, rep_key)
        return SamplePath(grid, np.zeros((grid.steps + 1, 1))), {"W": w}

    report = orthogonality_test(sampler, LADDER_SMALL[:3], 8, key)
    assert report.passed
    assert np.all(report.medians == 0.0)


def test_orthogonality_requires_battery():
    grid = make_grid(1.0, 64)
    key = RngKey(SEED)

    def sampler(rep_key):
        return sample_brownian(grid, 1, rep_key), {}

    with pytest.raises(ValueError, match="battery"):
        orthogonality_test(sampler, (0.25,), 2, key)


def test_weak_dirichlet_accepts_true_decompositions():
    grid = make_grid(1.0, 1024)
    key = RngKey(SEED, role="wd")

    def sampler_pure(rep_key):
        w = sample_brownian(grid, 1, rep_key.tagged("w"))
        return DecomposedPath(w, w), {"W": w}

    def sampler_with_drift(rep_key):
        w = sample_brownian(grid, 1, rep_key.tagged("w"))
        y = SamplePath(grid, w.values + grid.nodes[:, None])
        return DecomposedPath(y, w), {"W": w}

    assert weak_dirichlet_check(sampler_pure, LADDER_SMALL[:3], 8, key).passed
    assert weak_dirichlet_check(sampler_with_drift, LADDER_SMALL[:3], 8, key).passed


def test_weak_dirichlet_flags_missing_martingale_part():
    grid = make_grid(1.0, 1024)
    key = RngKey(SEED, role="wd2")

    def sampler(rep_key):
        w = sample_brownian(grid, 1, rep_key.tagged("w"))
        w0 = sample_brownian(grid, 1, rep_key.tagged("w0"))
        y = SamplePath(grid, w.values + w0.values)
        return DecomposedPath(y, w), {"W_common": w0}

    report = weak_dirichlet_check(sampler, LADDER_SMALL[:3], 8, key)
    assert not report.passed
    assert report.medians[0, -1] > 0.5


def test_report_monotonicity_rule():
    base = dict(eps_ladder=(0.25, 0.125), labels=("a",), theta=0.05)
    ok = ConvergenceReport(medians=np.array([[0.04, 0.02]]), q90s=np.zeros((1, 2)), **base)
    assert ok.passed
    growing = ConvergenceReport(medians=np.array([[0.01, 0.04]]), q90s=np.zeros((1, 2)), **base)
    assert not growing.passed
    # jitter at rounding scale is exempt from the monotone comparison
    jitter = ConvergenceReport(
        medians=np.array([[1e-16, 3e-16]]), q90s=np.zeros((1, 2)), **base
    )
    assert jitter.passed
    above = ConvergenceReport(medians=np.array([[0.2, 0.1]]), q90s=np.zeros((1, 2)), **base)
    assert not above.passed


def test_report_rows_and_json():
    report = ConvergenceReport(
        eps_ladder=(0.25, 0.125),
        labels=("a", "b"),
        medians=np.array([[0.03, 0.02], [0.01, 0.005]]),
        q90s=np.array([[0.05, 0.04], [0.02, 0.01]]),
    )
    rows = report.rows()
    assert rows[0] == (0.25, "a", 0.03, 0.05)
    assert len(rows) == 4
    payload = report.to_json_dict()
    assert payload["pass"] is True
    assert payload["worst_stat"] == pytest.approx(0.02)


def test_sup_deviation_with_reference():
    grid = make_grid(1.0, 64)
    est = qcov(ramp(grid), ramp(grid), 0.25)
    dev = sup_deviation(est, lambda t: 0.25 * t)
    assert dev < 1e-12
