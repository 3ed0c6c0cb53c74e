import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from measureflow import (
    CoefficientError,
    DecomposedPath,
    RngKey,
    SamplePath,
    SemimartingaleSpec,
    build_semimartingale,
    make_grid,
    sample_brownian,
    zero_path,
)

SEED = 20250810


def const_spec(a=0.0, sigma=0.0, sigma0=0.0):
    return SemimartingaleSpec(
        drift=lambda t, x: a,
        sigma=lambda t, x: sigma,
        sigma0=lambda t, x: sigma0,
        x0=lambda gen, n: np.zeros((n, 1)),
        dim=1,
    )


def test_make_grid_uniform_nodes():
    grid = make_grid(1.0, 4)
    assert np.array_equal(grid.nodes, [0.0, 0.25, 0.5, 0.75, 1.0])
    assert grid.nodes[-1] == 1.0


def test_make_grid_single_step():
    assert np.array_equal(make_grid(2.0, 1).nodes, [0.0, 2.0])


@pytest.mark.parametrize("horizon,steps", [(1.0, 0), (0.0, 4), (-1.0, 4), (np.inf, 4)])
def test_make_grid_rejects_bad_input(horizon, steps):
    with pytest.raises(ValueError):
        make_grid(horizon, steps)


@given(steps=st.integers(1, 500), horizon=st.floats(1e-3, 1e3))
@settings(max_examples=50, deadline=None)
def test_grid_nodes_increasing_and_exact_endpoint(steps, horizon):
    grid = make_grid(horizon, steps)
    nodes = grid.nodes
    assert nodes[0] == 0.0
    assert nodes[-1] == horizon
    assert np.all(np.diff(nodes) > 0)


def test_brownian_determinism():
    grid = make_grid(1.0, 64)
    key = RngKey(SEED, replication=3, role="w")
    a = sample_brownian(grid, 2, key)
    b = sample_brownian(grid, 2, key)
    assert np.array_equal(a.values, b.values)
    c = sample_brownian(grid, 2, key.tagged("other"))
    assert not np.array_equal(a.values, c.values)


def test_brownian_increment_variance_monte_carlo():
    # single increment over many keyed replications; variance estimator has
    # relative std sqrt(2/R), so 1% is a >2 sigma band at this R
    grid = make_grid(0.25, 1)
    reps = 100_000
    key = RngKey(SEED, role="var-check")
    draws = np.empty(reps)
    for r in range(reps):
        draws[r] = sample_brownian(grid, 1, key.rep(r)).values[1, 0]
    var = draws.var(ddof=1)
    assert abs(var - grid.dt) <= 0.01 * grid.dt


def test_brownian_streams_uncorrelated():
    grid = make_grid(1.0, 1)
    reps = 100_000
    key = RngKey(SEED)
    a = np.empty(reps)
    b = np.empty(reps)
    for r in range(reps):
        a[r] = sample_brownian(grid, 1, key.rep(r).tagged("lane-a")).values[1, 0]
        b[r] = sample_brownian(grid, 1, key.rep(r).tagged("lane-b")).values[1, 0]
    corr = np.corrcoef(a, b)[0, 1]
    assert abs(corr) < 0.01


def test_semimartingale_identity_driver():
    grid = make_grid(1.0, 128)
    key = RngKey(SEED, role="drivers")
    w = sample_brownian(grid, 1, key.tagged("w"))
    w0 = sample_brownian(grid, 1, key.tagged("w0"))
    x, parts = build_semimartingale(const_spec(sigma0=1.0), grid, w, w0, 0.0)
    assert np.array_equal(x.values, w0.values)
    assert np.all(parts["A"].values == 0.0)
    assert np.all(parts["M"].values == 0.0)


def test_semimartingale_pure_drift():
    grid = make_grid(1.0, 64)
    key = RngKey(SEED, role="drivers")
    w = sample_brownian(grid, 1, key.tagged("w"))
    w0 = sample_brownian(grid, 1, key.tagged("w0"))
    x, parts = build_semimartingale(const_spec(a=1.0), grid, w, w0, 0.0)
    assert x.values[-1, 0] == pytest.approx(1.0, abs=1e-12)
    assert parts["A"].values[-1, 0] == pytest.approx(1.0, abs=1e-12)


def test_semimartingale_idiosyncratic_only():
    grid = make_grid(1.0, 64)
    key = RngKey(SEED, role="drivers")
    w = sample_brownian(grid, 1, key.tagged("w"))
    w0 = sample_brownian(grid, 1, key.tagged("w0"))
    x, _ = build_semimartingale(const_spec(sigma=1.0), grid, w, w0, 0.0)
    assert np.array_equal(x.values, w.values)


def test_additive_decomposition_exact():
    grid = make_grid(1.0, 256)
    key = RngKey(SEED, role="drivers")
    w = sample_brownian(grid, 1, key.tagged("w"))
    w0 = sample_brownian(grid, 1, key.tagged("w0"))
    spec = const_spec(a=0.5, sigma=1.5, sigma0=0.7)
    x, parts = build_semimartingale(spec, grid, w, w0, 0.25)
    recon = 0.25 + parts["A"].values + parts["M"].values + parts["C"].values
    assert np.max(np.abs(x.values - recon)) < 1e-12


def test_nonfinite_coefficient_diagnostic():
    grid = make_grid(1.0, 8)
    key = RngKey(SEED, role="drivers")
    w = sample_brownian(grid, 1, key.tagged("w"))
    w0 = sample_brownian(grid, 1, key.tagged("w0"))
    bad = SemimartingaleSpec(
        drift=lambda t, x: np.where(t > 0.4, np.nan, 0.0),
        sigma=lambda t, x: 0.0,
        sigma0=lambda t, x: 0.0,
        x0=lambda gen, n: np.zeros((n, 1)),
    )
    with pytest.raises(CoefficientError, match="t="):
        build_semimartingale(bad, grid, w, w0, 0.0)


def test_path_csv_round_trip():
    grid = make_grid(1.0, 4)
    path = SamplePath(grid, np.array([[0.0], [0.1], [-0.25], [1e-17], [3.5]]))
    buf = io.StringIO()
    path.write_csv(buf)
    lines = buf.getvalue().strip().splitlines()
    assert lines[0] == "t,x_1"
    parsed = np.array([[float(v) for v in line.split(",")] for line in lines[1:]])
    assert np.array_equal(parsed[:, 0], grid.nodes)
    assert np.array_equal(parsed[:, 1:], path.values)


def test_path_validation():
    grid = make_grid(1.0, 4)
    with pytest.raises(ValueError):
        SamplePath(grid, np.zeros((4, 1)))  # wrong length
    with pytest.raises(ValueError):
        SamplePath(grid, np.full((5, 1), np.nan))


def test_decomposed_path_orthogonal_part():
    grid = make_grid(1.0, 16)
    w = sample_brownian(grid, 1, RngKey(SEED, role="w"))
    ramp = SamplePath(grid, grid.nodes[:, None])
    y = SamplePath(grid, w.values + ramp.values + 2.0)
    dec = DecomposedPath(y, w)
    assert np.allclose(dec.orthogonal_part().values, ramp.values, atol=1e-14)


def test_zero_path():
    grid = make_grid(2.0, 8)
    z = zero_path(grid, 3)
    assert z.values.shape == (9, 3)
    assert np.all(z.values == 0.0)
