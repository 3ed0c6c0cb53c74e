import io
import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from measureflow import (
    EmpiricalMeasure,
    flow_continuity_profile,
    integrate,
    integrate_pair,
    wasserstein2,
)

SEED = 20250810


def two_atoms():
    return EmpiricalMeasure(np.array([[0.0], [2.0]]))


def test_integrate_examples():
    mu = two_atoms()
    assert integrate(mu, lambda x: x[..., 0]) == pytest.approx(1.0)
    assert integrate(mu, lambda x: x[..., 0] ** 2) == pytest.approx(2.0)
    point = EmpiricalMeasure(np.array([[3.0]]))
    assert integrate(point, lambda x: np.sin(x[..., 0])) == pytest.approx(np.sin(3.0))


def test_integrate_vector_valued():
    mu = two_atoms()
    out = integrate(mu, lambda x: np.stack([x[..., 0], x[..., 0] ** 2], axis=-1))
    assert np.allclose(out, [1.0, 2.0])


def test_integrate_rejects_nonfinite():
    mu = two_atoms()
    with pytest.raises(ValueError):
        integrate(mu, lambda x: np.where(x[..., 0] > 1, np.inf, 1.0))


def test_integrate_pair_examples():
    mu = two_atoms()
    assert integrate_pair(mu, lambda a, b: a[..., 0] * b[..., 0]) == pytest.approx(1.0)
    assert integrate_pair(mu, lambda a, b: np.ones(np.broadcast_shapes(a[..., 0].shape, b[..., 0].shape))) == pytest.approx(1.0)
    point = EmpiricalMeasure(np.array([[2.0]]))
    assert integrate_pair(point, lambda a, b: a[..., 0] + b[..., 0]) == pytest.approx(4.0)


def brute_force_w2(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    # exhaustive search over assignments; the independent oracle for small n
    n = mu.n_atoms
    best = np.inf
    for perm in itertools.permutations(range(n)):
        cost = sum(np.sum((mu.atoms[i] - nu.atoms[perm[i]]) ** 2) for i in range(n))
        best = min(best, cost)
    return float(np.sqrt(best / n))


def test_wasserstein_examples():
    assert wasserstein2(EmpiricalMeasure([[0.0]]), EmpiricalMeasure([[1.0]])) == pytest.approx(1.0)
    a = EmpiricalMeasure([[0.0], [1.0]])
    b = EmpiricalMeasure([[1.0], [2.0]])
    assert wasserstein2(a, b) == pytest.approx(1.0)
    c = EmpiricalMeasure([[0.0], [3.0]])
    # exhaustive pairing gives min cost (0^2 + 2^2) / 2 = 2
    assert brute_force_w2(a, c) == pytest.approx(np.sqrt(2.0))
    assert wasserstein2(a, c) == pytest.approx(np.sqrt(2.0))


def test_wasserstein_matches_brute_force_random():
    gen = np.random.default_rng(SEED)
    for _ in range(20):
        n = int(gen.integers(2, 6))
        d = int(gen.integers(1, 4))
        mu = EmpiricalMeasure(gen.standard_normal((n, d)))
        nu = EmpiricalMeasure(gen.standard_normal((n, d)))
        assert wasserstein2(mu, nu) == pytest.approx(brute_force_w2(mu, nu), abs=1e-12)


def test_sorted_and_assignment_agree_in_1d():
    gen = np.random.default_rng(SEED + 1)
    for _ in range(20):
        n = int(gen.integers(2, 64))
        mu = EmpiricalMeasure(gen.standard_normal((n, 1)))
        nu = EmpiricalMeasure(gen.standard_normal((n, 1)))
        s = wasserstein2(mu, nu, method="sorted")
        a = wasserstein2(mu, nu, method="assignment")
        assert abs(s - a) < 1e-10


def test_metric_properties_random_triples():
    gen = np.random.default_rng(SEED + 2)
    for _ in range(10):
        n = int(gen.integers(2, 16))
        mu = EmpiricalMeasure(gen.standard_normal((n, 1)))
        nu = EmpiricalMeasure(gen.standard_normal((n, 1)))
        rho = EmpiricalMeasure(gen.standard_normal((n, 1)))
        assert wasserstein2(mu, nu) == wasserstein2(nu, mu)
        assert wasserstein2(mu, rho) <= wasserstein2(mu, nu) + wasserstein2(nu, rho) + 1e-10
    mu = EmpiricalMeasure([[1.0], [0.0]])
    same = EmpiricalMeasure([[0.0], [1.0]])  # same cloud, permuted
    assert wasserstein2(mu, same) == 0.0


@given(
    atoms=arrays(np.float64, (5, 2), elements=st.floats(-50, 50)),
    shift=arrays(np.float64, (2,), elements=st.floats(-20, 20)),
)
@settings(max_examples=40, deadline=None)
def test_translation_moves_by_shift_norm(atoms, shift):
    mu = EmpiricalMeasure(atoms)
    assert wasserstein2(mu, mu.shifted(shift)) == pytest.approx(
        float(np.linalg.norm(shift)), abs=1e-9
    )


def test_wasserstein_guards():
    with pytest.raises(ValueError):
        wasserstein2(EmpiricalMeasure([[0.0]]), EmpiricalMeasure([[0.0], [1.0]]))
    big = EmpiricalMeasure(np.random.default_rng(0).standard_normal((65, 2)))
    with pytest.raises(ValueError, match="subsample"):
        wasserstein2(big, big.shifted([1.0, 0.0]))


def test_flow_continuity_profile_constant_flow():
    mu = two_atoms()
    assert np.all(flow_continuity_profile([mu, mu, mu]) == 0.0)


def test_flow_continuity_profile_single_atom_brownian():
    gen = np.random.default_rng(SEED + 3)
    w = np.concatenate([[0.0], np.cumsum(gen.standard_normal(16) * 0.25)])
    flow = [EmpiricalMeasure([[v]]) for v in w]
    profile = flow_continuity_profile(flow)
    assert np.allclose(profile, np.abs(np.diff(w)), atol=1e-14)


def test_measure_csv():
    mu = EmpiricalMeasure(np.array([[0.5, -1.0], [2.0, 0.25]]))
    buf = io.StringIO()
    mu.write_csv(buf)
    lines = buf.getvalue().strip().splitlines()
    assert lines[0] == "x_1,x_2"
    parsed = np.array([[float(v) for v in line.split(",")] for line in lines[1:]])
    assert np.array_equal(parsed, mu.atoms)


def test_measure_validation():
    with pytest.raises(ValueError):
        EmpiricalMeasure(np.zeros((0, 1)))
    with pytest.raises(ValueError):
        EmpiricalMeasure(np.array([[np.inf]]))
