"""Cylindrical functionals F(t, y, m) = f(t, y, m(phi_1), ..., m(phi_J)) on
atom clouds, with closed-form measure derivatives and finite-difference
oracles.

The flat derivative is normalized by its chain-rule representative
sum_j df/dz_j * phi_j(x); only its x-gradient enters any integral downstream,
so the additive-constant ambiguity is observationally irrelevant and fixed
this way once and for all.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .measures import EmpiricalMeasure, integrate
from .rng import RngKey

GROWTH_CLASSES = ("bounded", "linear", "quadratic")


@dataclass(frozen=True)
class TestFunction:
    """Scalar test function with supplied gradient and Hessian.

    All three callables are vectorized over leading axes: value maps
    (..., d) -> (...), grad -> (..., d), hess -> (..., d, d).
    """

    name: str
    growth: str
    value: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    hess: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self) -> None:
        if self.growth not in GROWTH_CLASSES:
            raise ValueError(f"growth must be one of {GROWTH_CLASSES}, got {self.growth!r}")

    def derivative_gap(self, points: np.ndarray, step: float = 1e-5) -> float:
        """Worst relative mismatch between supplied derivatives and central
        finite differences at the given (m, d) points."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        d = pts.shape[1]
        worst = 0.0
        g = np.asarray(self.grad(pts), dtype=float)
        for c in range(d):
            e = np.zeros(d)
            e[c] = step
            fd = (np.asarray(self.value(pts + e)) - np.asarray(self.value(pts - e))) / (2 * step)
            gap = np.max(np.abs(fd - g[:, c]) / (1.0 + np.abs(g[:, c])))
            worst = max(worst, float(gap))
        if self.hess is not None:
            h = np.asarray(self.hess(pts), dtype=float)
            for c in range(d):
                e = np.zeros(d)
                e[c] = step
                fd = (np.asarray(self.grad(pts + e)) - np.asarray(self.grad(pts - e))) / (2 * step)
                gap = np.max(np.abs(fd - h[:, :, c]) / (1.0 + np.abs(h[:, :, c])))
                worst = max(worst, float(gap))
        return worst


@dataclass(frozen=True)
class CylindricalFunctional:
    """F(t, y, m) = f(t, y, z) with z_j = m(phi_j) and supplied derivatives of f.

    f and its derivatives take (t: float, y: (d,), z: (J,)); df_dy returns
    (d,), df_dz returns (J,), d2f_dz2 (when present) returns (J, J).
    """

    name: str
    tests: tuple[TestFunction, ...]
    f: Callable[[float, np.ndarray, np.ndarray], float]
    df_dt: Callable[[float, np.ndarray, np.ndarray], float]
    df_dy: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    df_dz: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    d2f_dz2: Callable[[float, np.ndarray, np.ndarray], np.ndarray] | None = None
    depends_on_y: bool = False

    def __post_init__(self) -> None:
        if len(self.tests) < 1:
            raise ValueError("a cylindrical functional needs at least one test function")

    @property
    def n_tests(self) -> int:
        return len(self.tests)

    # -- evaluation ---------------------------------------------------------

    def z_of(self, mu: EmpiricalMeasure) -> np.ndarray:
        return np.array([integrate(mu, tf.value) for tf in self.tests])

    def value_at_z(self, t: float, y: np.ndarray, z: np.ndarray) -> float:
        out = float(self.f(t, y, z))
        if not np.isfinite(out):
            raise ValueError(f"{self.name}: non-finite value at t={t!r}, z={z}")
        return out

    def value(self, t: float, y, mu: EmpiricalMeasure) -> float:
        return self.value_at_z(t, np.atleast_1d(np.asarray(y, float)), self.z_of(mu))

    def d_y(self, t: float, y, mu: EmpiricalMeasure) -> np.ndarray:
        y = np.atleast_1d(np.asarray(y, float))
        out = np.asarray(self.df_dy(t, y, self.z_of(mu)), dtype=float)
        if not np.isfinite(out).all():
            raise ValueError(f"{self.name}: non-finite y-gradient")
        return out

    def time_derivative(self, t: float, y, mu: EmpiricalMeasure) -> float:
        y = np.atleast_1d(np.asarray(y, float))
        return float(self.df_dt(t, y, self.z_of(mu)))

    # -- measure derivatives --------------------------------------------------

    def flat_at_z(self, t: float, y: np.ndarray, z: np.ndarray, x: np.ndarray):
        """Flat derivative kernel at points x, holding z fixed."""
        w = np.asarray(self.df_dz(t, y, z), dtype=float)
        x = np.asarray(x, dtype=float)
        vals = np.stack([np.asarray(tf.value(x), dtype=float) for tf in self.tests], axis=-1)
        return vals @ w

    def flat_derivative(self, t: float, y, mu: EmpiricalMeasure, x):
        y = np.atleast_1d(np.asarray(y, float))
        return self.flat_at_z(t, y, self.z_of(mu), x)

    def lions_at_z(self, t: float, y: np.ndarray, z: np.ndarray, x: np.ndarray) -> np.ndarray:
        """x-gradient of the flat derivative: sum_j df/dz_j * phi_j'(x)."""
        w = np.asarray(self.df_dz(t, y, z), dtype=float)
        x = np.asarray(x, dtype=float)
        if len(self.tests) == 1:
            return float(w[0]) * np.asarray(self.tests[0].grad(x), dtype=float)
        grads = np.stack([np.asarray(tf.grad(x), dtype=float) for tf in self.tests], axis=-1)
        return grads @ w

    def lions_derivative(self, t: float, y, mu: EmpiricalMeasure, x) -> np.ndarray:
        y = np.atleast_1d(np.asarray(y, float))
        return self.lions_at_z(t, y, self.z_of(mu), x)

    def x_grad_lions_at_z(self, t: float, y: np.ndarray, z: np.ndarray, x: np.ndarray) -> np.ndarray:
        """x-Jacobian of the Lions derivative: sum_j df/dz_j * phi_j''(x)."""
        if any(tf.hess is None for tf in self.tests):
            raise ValueError(f"{self.name}: second derivatives unavailable (missing hessians)")
        w = np.asarray(self.df_dz(t, y, z), dtype=float)
        x = np.asarray(x, dtype=float)
        if len(self.tests) == 1:
            return float(w[0]) * np.asarray(self.tests[0].hess(x), dtype=float)
        hs = np.stack([np.asarray(tf.hess(x), dtype=float) for tf in self.tests], axis=-1)
        return hs @ w

    def lions_pair_at_z(
        self, t: float, y: np.ndarray, z: np.ndarray, x, x2
    ) -> np.ndarray:
        """Second measure derivative at one pair of points, the (d, d) matrix
        sum_jk d2f/dz_j dz_k * phi_j'(x) phi_k'(x2)^T."""
        if self.d2f_dz2 is None:
            raise ValueError(f"{self.name}: second derivatives unavailable (missing d2f_dz2)")
        h = np.asarray(self.d2f_dz2(t, y, z), dtype=float)
        p1 = np.atleast_2d(np.asarray(x, float))
        p2 = np.atleast_2d(np.asarray(x2, float))
        g1 = np.stack([np.asarray(tf.grad(p1), float)[0] for tf in self.tests])  # (J, d)
        g2 = np.stack([np.asarray(tf.grad(p2), float)[0] for tf in self.tests])
        return np.einsum("jk,jp,kq->pq", h, g1, g2)

    def second_derivatives(self, t: float, y, mu: EmpiricalMeasure, x, x2):
        """(dF/dt, x-Jacobian of the Lions derivative at x, second measure
        derivative at (x, x2)); x and x2 are single points."""
        y = np.atleast_1d(np.asarray(y, float))
        z = self.z_of(mu)
        dt = float(self.df_dt(t, y, z))
        pts = np.atleast_2d(np.asarray(x, float))
        dxdm = self.x_grad_lions_at_z(t, y, z, pts)[0]
        dm2 = self.lions_pair_at_z(t, y, z, x, x2)
        return dt, dxdm, dm2


def flat_derivative_check(
    functional: CylindricalFunctional,
    t: float,
    y,
    mu: EmpiricalMeasure,
    nu: EmpiricalMeasure,
    quad_steps: int,
) -> float:
    """Residual of the segment identity
    F(nu) - F(mu) - int_0^1 (nu - mu)(flat(mu + s(nu - mu), .)) ds,
    with the s-integral by the midpoint rule and the signed pairing evaluated
    atomwise.  Exact (to rounding) for F linear in m; O(quad_steps^-2) else.
    """
    if mu.n_atoms != nu.n_atoms:
        raise ValueError("mu and nu must have equal atom counts")
    if quad_steps < 1:
        raise ValueError("quad_steps must be positive")
    y = np.atleast_1d(np.asarray(y, float))
    z0 = functional.z_of(mu)
    z1 = functional.z_of(nu)
    gap = functional.value_at_z(t, y, z1) - functional.value_at_z(t, y, z0)
    acc = 0.0
    for i in range(quad_steps):
        s = (i + 0.5) / quad_steps
        z = (1.0 - s) * z0 + s * z1
        pairing = float(
            np.mean(functional.flat_at_z(t, y, z, nu.atoms))
            - np.mean(functional.flat_at_z(t, y, z, mu.atoms))
        )
        acc += pairing
    return abs(gap - acc / quad_steps)


def lions_fd_gap(
    functional: CylindricalFunctional,
    t: float,
    y,
    mu: EmpiricalMeasure,
    x,
    step: float = 1e-5,
) -> float:
    """Worst gap between the Lions derivative and the central finite
    difference of the flat derivative in x."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    d = x.shape[1]
    lions = np.atleast_2d(functional.lions_derivative(t, y, mu, x))
    worst = 0.0
    for c in range(d):
        e = np.zeros(d)
        e[c] = step
        up = np.asarray(functional.flat_derivative(t, y, mu, x + e), float)
        dn = np.asarray(functional.flat_derivative(t, y, mu, x - e), float)
        fd = (up - dn) / (2 * step)
        worst = max(worst, float(np.max(np.abs(fd - lions[:, c]))))
    return worst


def dy_fd_gap(
    functional: CylindricalFunctional,
    t: float,
    y,
    mu: EmpiricalMeasure,
    step: float = 1e-5,
) -> float:
    y = np.atleast_1d(np.asarray(y, dtype=float))
    grad = functional.d_y(t, y, mu)
    worst = 0.0
    for c in range(y.size):
        e = np.zeros(y.size)
        e[c] = step
        fd = (functional.value(t, y + e, mu) - functional.value(t, y - e, mu)) / (2 * step)
        worst = max(worst, abs(fd - grad[c]))
    return worst


def validate_functional(
    functional: CylindricalFunctional,
    key: RngKey,
    dim: int = 1,
    n_points: int = 16,
    step: float = 1e-5,
    tol: float = 1e-6,
) -> float:
    """Finite-difference consistency sweep over randomized points.

    Checks every supplied test-function derivative, the y-gradient and the
    Lions/flat pair.  Returns the worst gap; raises when it exceeds tol.
    """
    gen = key.generator()
    pts = gen.standard_normal((n_points, dim))
    worst = max(tf.derivative_gap(pts, step=step) for tf in functional.tests)
    mu = EmpiricalMeasure(gen.standard_normal((8, dim)))
    for _ in range(4):
        t = float(gen.uniform(0.0, 1.0))
        y = gen.standard_normal(dim)
        worst = max(worst, dy_fd_gap(functional, t, y, mu, step=step))
        worst = max(worst, lions_fd_gap(functional, t, y, mu, gen.standard_normal((4, dim)), step=step))
        # df_dz against a finite difference of f in z
        z = functional.z_of(mu)
        w = np.asarray(functional.df_dz(t, y, z), dtype=float)
        for j in range(functional.n_tests):
            e = np.zeros_like(z)
            e[j] = step
            fd = (functional.value_at_z(t, y, z + e) - functional.value_at_z(t, y, z - e)) / (2 * step)
            worst = max(worst, abs(fd - w[j]) / (1.0 + abs(w[j])))
    if worst > tol:
        raise ValueError(
            f"{functional.name}: supplied derivatives fail finite-difference "
            f"consistency (worst gap {worst:.3e} > {tol:.1e})"
        )
    return worst


@dataclass(frozen=True)
class GrowthCertificate:
    """Empirical linear-growth constant for the Lions derivative:
    |D_m F(t, y, mu, x)| <= constant * (1 + |x|) over the probed ranges."""

    constant: float
    x_radius: float
    measure_radius: float


def linear_growth_certificate(
    functional: CylindricalFunctional,
    key: RngKey,
    dim: int = 1,
    n_probes: int = 128,
    x_radius: float = 50.0,
    measure_radius: float = 10.0,
    horizon: float = 1.0,
) -> GrowthCertificate:
    """Probe |Lions derivative| / (1 + |x|) over randomized inputs.

    Requires each inner test function to be at most of quadratic growth so
    that its gradient is at most linear; anything else fails structurally.
    """
    bad = [tf.name for tf in functional.tests if tf.growth not in GROWTH_CLASSES]
    if bad:
        raise ValueError(f"{functional.name}: test functions beyond quadratic growth: {bad}")
    gen = key.generator()
    worst = 0.0
    for _ in range(n_probes):
        t = float(gen.uniform(0.0, horizon))
        y = gen.uniform(-measure_radius, measure_radius, size=dim)
        atoms = gen.uniform(-measure_radius, measure_radius, size=(8, dim))
        mu = EmpiricalMeasure(atoms)
        x = gen.uniform(-x_radius, x_radius, size=(16, dim))
        dm = np.atleast_2d(functional.lions_derivative(t, y, mu, x))
        ratio = np.linalg.norm(dm, axis=1) / (1.0 + np.linalg.norm(x, axis=1))
        worst = max(worst, float(ratio.max()))
    return GrowthCertificate(worst, x_radius, measure_radius)


# ---------------------------------------------------------------------------
# built-in registry (one-dimensional state)
# ---------------------------------------------------------------------------


def _zero_hess(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    return np.zeros(x.shape[:-1] + (d, d))


def tf_identity() -> TestFunction:
    return TestFunction(
        name="identity",
        growth="linear",
        value=lambda x: np.asarray(x, float)[..., 0],
        grad=lambda x: np.ones_like(np.asarray(x, float)),
        hess=_zero_hess,
    )


def tf_square() -> TestFunction:
    return TestFunction(
        name="square",
        growth="quadratic",
        value=lambda x: np.asarray(x, float)[..., 0] ** 2,
        grad=lambda x: 2.0 * np.asarray(x, float),
        hess=lambda x: np.full(np.asarray(x, float).shape[:-1] + (1, 1), 2.0),
    )


def tf_sigmoid(center: float = 0.0, width: float = 1.0) -> TestFunction:
    if width <= 0:
        raise ValueError("width must be positive")

    def _u(x):
        return (np.asarray(x, float)[..., 0] - center) / width

    def _s(u):
        return 1.0 / (1.0 + np.exp(-u))

    return TestFunction(
        name=f"sigmoid({center!r},{width!r})",
        growth="bounded",
        value=lambda x: _s(_u(x)),
        grad=lambda x: (_s(_u(x)) * (1.0 - _s(_u(x))) / width)[..., None],
        hess=lambda x: (
            _s(_u(x)) * (1.0 - _s(_u(x))) * (1.0 - 2.0 * _s(_u(x))) / width**2
        )[..., None, None],
    )


def make_mean() -> CylindricalFunctional:
    return CylindricalFunctional(
        name="mean",
        tests=(tf_identity(),),
        f=lambda t, y, z: z[0],
        df_dt=lambda t, y, z: 0.0,
        df_dy=lambda t, y, z: np.zeros_like(y),
        df_dz=lambda t, y, z: np.ones(1),
        d2f_dz2=lambda t, y, z: np.zeros((1, 1)),
    )


def make_second_moment() -> CylindricalFunctional:
    return CylindricalFunctional(
        name="second_moment",
        tests=(tf_square(),),
        f=lambda t, y, z: z[0],
        df_dt=lambda t, y, z: 0.0,
        df_dy=lambda t, y, z: np.zeros_like(y),
        df_dz=lambda t, y, z: np.ones(1),
        d2f_dz2=lambda t, y, z: np.zeros((1, 1)),
    )


def make_mean_squared() -> CylindricalFunctional:
    return CylindricalFunctional(
        name="mean_squared",
        tests=(tf_identity(),),
        f=lambda t, y, z: z[0] ** 2,
        df_dt=lambda t, y, z: 0.0,
        df_dy=lambda t, y, z: np.zeros_like(y),
        df_dz=lambda t, y, z: np.array([2.0 * z[0]]),
        d2f_dz2=lambda t, y, z: np.array([[2.0]]),
    )


def make_smooth_cdf(center: float = 0.0, width: float = 1.0) -> CylindricalFunctional:
    return CylindricalFunctional(
        name=f"smooth_cdf({center!r},{width!r})",
        tests=(tf_sigmoid(center, width),),
        f=lambda t, y, z: z[0],
        df_dt=lambda t, y, z: 0.0,
        df_dy=lambda t, y, z: np.zeros_like(y),
        df_dz=lambda t, y, z: np.ones(1),
        d2f_dz2=lambda t, y, z: np.zeros((1, 1)),
    )


def make_ty_mix() -> CylindricalFunctional:
    """F(t, y, m) = t + y * m(x), one-dimensional y."""
    return CylindricalFunctional(
        name="ty_mix",
        tests=(tf_identity(),),
        f=lambda t, y, z: t + y[0] * z[0],
        df_dt=lambda t, y, z: 1.0,
        df_dy=lambda t, y, z: np.array([z[0]]),
        df_dz=lambda t, y, z: np.array([y[0]]),
        d2f_dz2=lambda t, y, z: np.zeros((1, 1)),
        depends_on_y=True,
    )


def make_mean_badgrad() -> CylindricalFunctional:
    """Debug entry: value of `mean` with a deliberately wrong z-gradient."""
    return CylindricalFunctional(
        name="mean_badgrad",
        tests=(tf_identity(),),
        f=lambda t, y, z: z[0],
        df_dt=lambda t, y, z: 0.0,
        df_dy=lambda t, y, z: np.zeros_like(y),
        df_dz=lambda t, y, z: np.array([1.25]),
        d2f_dz2=lambda t, y, z: np.zeros((1, 1)),
    )


FUNCTIONAL_BUILDERS: dict[str, Callable[..., CylindricalFunctional]] = {
    "mean": make_mean,
    "second_moment": make_second_moment,
    "mean_squared": make_mean_squared,
    "smooth_cdf": make_smooth_cdf,
    "ty_mix": make_ty_mix,
    "mean_badgrad": make_mean_badgrad,
}


def build_functional(name: str, params: tuple = ()) -> CylindricalFunctional:
    if name not in FUNCTIONAL_BUILDERS:
        raise KeyError(f"unknown functional {name!r}; known: {sorted(FUNCTIONAL_BUILDERS)}")
    return FUNCTIONAL_BUILDERS[name](*params)
