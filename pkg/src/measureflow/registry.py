"""Named builders for coefficients, initial laws, costs and value models.

Configs stay declarative: they select registry entries by `name` or
`name:param1,param2` tags instead of carrying code.  Registry entries record
whether the coefficient is bounded; commands that require bounded dynamics
reject unbounded selections at config time.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .control import RunningCost, ValueModel
from .measures import EmpiricalMeasure


class RegistryError(KeyError):
    pass


def parse_tag(tag: str) -> tuple[str, tuple[float, ...]]:
    """'const:1.0' -> ('const', (1.0,)); bare names carry no parameters."""
    name, _, rest = tag.partition(":")
    name = name.strip()
    if not name:
        raise RegistryError(f"empty registry tag {tag!r}")
    if not rest.strip():
        return name, ()
    try:
        params = tuple(float(p) for p in rest.split(","))
    except ValueError as exc:
        raise RegistryError(f"non-numeric parameter in tag {tag!r}") from exc
    return name, params


# ---------------------------------------------------------------------------
# coefficients (t, x) -> drift / volatility, one-dimensional by default
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoefficientEntry:
    fn: Callable[[float, np.ndarray], object]
    bounded: bool
    bound: float
    tag: str

    def measure_free(self) -> Callable[[float, np.ndarray, EmpiricalMeasure], object]:
        fn = self.fn
        return lambda t, x, _mu: fn(t, x)


def _coeff_zero() -> CoefficientEntry:
    return CoefficientEntry(fn=lambda t, x: 0.0, bounded=True, bound=0.0, tag="zero")


def _coeff_const(value: float) -> CoefficientEntry:
    if not np.isfinite(value):
        raise RegistryError(f"const coefficient must be finite, got {value!r}")
    return CoefficientEntry(
        fn=lambda t, x: float(value), bounded=True, bound=abs(float(value)), tag=f"const:{value!r}"
    )


def _coeff_linear(rate: float) -> CoefficientEntry:
    # linear growth in x: Lipschitz but unbounded; commands needing bounded
    # coefficients must reject this entry.
    return CoefficientEntry(
        fn=lambda t, x: float(rate) * np.asarray(x, dtype=float),
        bounded=False,
        bound=float("inf"),
        tag=f"linear:{rate!r}",
    )


_COEFFICIENTS: dict[str, Callable[..., CoefficientEntry]] = {
    "zero": _coeff_zero,
    "const": _coeff_const,
    "linear": _coeff_linear,
}


def build_coefficient(tag: str, require_bounded: bool = False) -> CoefficientEntry:
    name, params = parse_tag(tag)
    if name not in _COEFFICIENTS:
        raise RegistryError(f"unknown coefficient {name!r}; known: {sorted(_COEFFICIENTS)}")
    entry = _COEFFICIENTS[name](*params)
    if require_bounded and not entry.bounded:
        raise RegistryError(f"coefficient {tag!r} is unbounded; this command requires bounded coefficients")
    return entry


# ---------------------------------------------------------------------------
# initial laws (one-dimensional samplers)
# ---------------------------------------------------------------------------


def _law_dirac(c: float = 0.0):
    return lambda gen, n: np.full((n, 1), float(c))


def _law_gauss(mean: float = 0.0, std: float = 1.0):
    if std < 0:
        raise RegistryError("gauss law needs std >= 0")
    return lambda gen, n: mean + std * gen.standard_normal((n, 1))


def _law_uniform(lo: float = -1.0, hi: float = 1.0):
    if not lo < hi:
        raise RegistryError("uniform law needs lo < hi")
    return lambda gen, n: gen.uniform(lo, hi, size=(n, 1))


_LAWS: dict[str, Callable] = {
    "dirac": _law_dirac,
    "gauss": _law_gauss,
    "uniform": _law_uniform,
}


def build_initial_law(tag: str) -> Callable[[np.random.Generator, int], np.ndarray]:
    name, params = parse_tag(tag)
    if name not in _LAWS:
        raise RegistryError(f"unknown initial law {name!r}; known: {sorted(_LAWS)}")
    return _LAWS[name](*params)


# ---------------------------------------------------------------------------
# control costs and value models
# ---------------------------------------------------------------------------


def _cost_quadratic_penalty() -> RunningCost:
    return RunningCost(fn=lambda t, mu, u: -0.5 * float(u @ u), quadratic_in_u=True, mu_free=True)


def _cost_zero() -> RunningCost:
    return RunningCost(fn=lambda t, mu, u: 0.0, quadratic_in_u=False, mu_free=True)


_RUNNING_COSTS: dict[str, Callable[..., RunningCost]] = {
    "quadratic_penalty": _cost_quadratic_penalty,
    "zero": _cost_zero,
}


def build_running_cost(tag: str) -> RunningCost:
    name, params = parse_tag(tag)
    if name not in _RUNNING_COSTS:
        raise RegistryError(f"unknown running cost {name!r}; known: {sorted(_RUNNING_COSTS)}")
    return _RUNNING_COSTS[name](*params)


def _terminal_mean() -> Callable[[EmpiricalMeasure], float]:
    return lambda mu: float(mu.atoms[:, 0].mean())


def _terminal_neg_mean_sq() -> Callable[[EmpiricalMeasure], float]:
    return lambda mu: -float(mu.atoms[:, 0].mean()) ** 2


_TERMINAL_COSTS: dict[str, Callable] = {
    "mean_terminal": _terminal_mean,
    "neg_mean_sq": _terminal_neg_mean_sq,
}


def build_terminal_cost(tag: str) -> Callable[[EmpiricalMeasure], float]:
    name, params = parse_tag(tag)
    if name not in _TERMINAL_COSTS:
        raise RegistryError(f"unknown terminal cost {name!r}; known: {sorted(_TERMINAL_COSTS)}")
    return _TERMINAL_COSTS[name](*params)


def _vm_lq_exact(horizon: float = 1.0) -> ValueModel:
    """Exact model for the quadratic-penalty / terminal-mean instance with
    unit volatilities: V(t, mu) = mu(x) + (T - t) / 2, derivative 1."""
    return ValueModel(
        value=lambda t, mu: float(mu.atoms[:, 0].mean()) + 0.5 * (horizon - t),
        d_m=lambda t, mu, x: np.ones_like(np.atleast_2d(np.asarray(x, float))),
        dm_bound=1.0,
    )


def _vm_lq_zerograd(horizon: float = 1.0) -> ValueModel:
    """Deliberately wrong model: same values, vanishing derivative."""
    return ValueModel(
        value=lambda t, mu: float(mu.atoms[:, 0].mean()) + 0.5 * (horizon - t),
        d_m=lambda t, mu, x: np.zeros_like(np.atleast_2d(np.asarray(x, float))),
        dm_bound=1.0,
    )


_VALUE_MODELS: dict[str, Callable[..., ValueModel]] = {
    "lq_exact": _vm_lq_exact,
    "lq_zerograd": _vm_lq_zerograd,
}


def build_value_model(tag: str) -> ValueModel:
    name, params = parse_tag(tag)
    if name not in _VALUE_MODELS:
        raise RegistryError(f"unknown value model {name!r}; known: {sorted(_VALUE_MODELS)}")
    return _VALUE_MODELS[name](*params)
