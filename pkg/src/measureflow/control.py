"""Drift control of conditional particle systems through the common noise:
Hamiltonian maximization, feedback-policy rollouts, an open-loop enumeration
baseline, and pathwise dual-certificate residuals.

The Hamiltonian pairing contracts as matrix-on-vector first, then
measure-average, then inner product with the control:
H(t, mu, p) = sup_u [ L(t, mu, u) + u . mu( sigma0(t, ., mu) p(mu, .) ) ].
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .grids import TimeGrid, mat_vec
from .measures import EmpiricalMeasure, bare_measure
from .particles import common_increments, idiosyncratic_increments
from .rng import RngKey, pmap


class EnumerationGuardError(ValueError):
    """Open-loop enumeration would exceed the configured word budget."""


@dataclass(frozen=True)
class BoxControls:
    """Compact box control set with an optional finite grid refinement."""

    lower: np.ndarray
    upper: np.ndarray
    grid_points: int = 33

    def __post_init__(self) -> None:
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lower and upper must be vectors of equal length")
        if not (np.isfinite(lo).all() and np.isfinite(hi).all()):
            raise ValueError("control box bounds must be finite")
        if np.any(lo > hi):
            raise ValueError("lower bound exceeds upper bound")
        if self.grid_points < 1:
            raise ValueError("grid_points must be positive")
        lo, hi = lo.copy(), hi.copy()
        lo.flags.writeable = False
        hi.flags.writeable = False
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def clip(self, u: np.ndarray) -> np.ndarray:
        return np.clip(np.atleast_1d(np.asarray(u, dtype=float)), self.lower, self.upper)

    def coordinate_grid(self) -> np.ndarray:
        return np.linspace(self.lower, self.upper, self.grid_points).T  # (d, points)

    def candidates(self):
        """All grid points of the box, in lexicographic order."""
        axes = self.coordinate_grid()
        for combo in itertools.product(*axes):
            yield np.array(combo)

    def max_abs(self) -> float:
        """max |u| over the box: norm of the componentwise extreme corner."""
        return float(np.linalg.norm(np.maximum(np.abs(self.lower), np.abs(self.upper))))


@dataclass(frozen=True)
class RunningCost:
    """Running reward L(t, mu, u); `quadratic_in_u` marks the closed-form
    family L = c(t, mu) - |u|^2 / 2 whose maximizer is a box projection.
    `mu_free` declares that fn never reads mu (enables batched rollouts)."""

    fn: Callable[[float, EmpiricalMeasure, np.ndarray], float]
    quadratic_in_u: bool = False
    mu_free: bool = False


@dataclass(frozen=True)
class ControlProblemSpec:
    """Coefficients, control set, costs and initial law of one problem.

    sigma and sigma0 take (t, states (n, d), mu); costs are bounded by caller
    contract, with `coefficient_bound` recording the declared sup bound.
    `coefficients_measure_free` declares that sigma and sigma0 never read mu
    (enables batched open-loop rollouts)."""

    horizon: float
    dim: int
    sigma: Callable[[float, np.ndarray, EmpiricalMeasure], object]
    sigma0: Callable[[float, np.ndarray, EmpiricalMeasure], object]
    controls: BoxControls
    running_cost: RunningCost
    terminal_cost: Callable[[EmpiricalMeasure], float]
    m0: Callable[[np.random.Generator, int], np.ndarray]
    coefficient_bound: float = float("inf")
    coefficients_measure_free: bool = False

    def sample_m0(self, gen: np.random.Generator, n: int) -> np.ndarray:
        arr = np.asarray(self.m0(gen, n), dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.shape != (n, self.dim):
            raise ValueError(f"m0 sampler returned shape {arr.shape}, wanted {(n, self.dim)}")
        if not np.isfinite(arr).all():
            raise ValueError("m0 sampler produced non-finite values")
        return arr


@dataclass(frozen=True)
class FeedbackPolicy:
    """Measurable map (t, conditional law) -> control point."""

    fn: Callable[[float, EmpiricalMeasure], np.ndarray]


def word_policy(word: Sequence[float], horizon: float, pieces: int) -> FeedbackPolicy:
    """Deterministic piecewise-constant policy on `pieces` equal intervals."""
    values = [np.atleast_1d(np.asarray(u, dtype=float)) for u in word]
    if len(values) != pieces:
        raise ValueError("word length must equal the number of pieces")

    def fn(t: float, _mu: EmpiricalMeasure) -> np.ndarray:
        piece = min(int(t / horizon * pieces), pieces - 1)
        return values[piece]

    return FeedbackPolicy(fn)


@dataclass(frozen=True)
class DualCertificate:
    """Pair (v0, phi) for the pathwise super-replication inequality; phi is a
    bounded kernel on (law, point).  By default phi may move with the running
    time of the integrand; `time_frozen` pins it at t = 0."""

    v0: float
    phi: Callable[[float, EmpiricalMeasure, np.ndarray], np.ndarray]
    bound: float
    time_frozen: bool = False

    def phi_at(self, t: float, mu: EmpiricalMeasure, x: np.ndarray) -> np.ndarray:
        tt = 0.0 if self.time_frozen else t
        out = np.asarray(self.phi(tt, mu, x), dtype=float)
        if out.ndim == 1:
            out = out[:, None]
        if not np.isfinite(out).all():
            raise ValueError("certificate kernel produced non-finite values")
        if np.max(np.abs(out)) > self.bound + 1e-12:
            raise ValueError("certificate kernel exceeded its declared bound")
        return out


@dataclass(frozen=True)
class ValueModel:
    """Candidate value function with its measure derivative."""

    value: Callable[[float, EmpiricalMeasure], float]
    d_m: Callable[[float, EmpiricalMeasure, np.ndarray], np.ndarray]
    dm_bound: float

    def certificate(self, v0: float, time_frozen: bool = False) -> DualCertificate:
        return DualCertificate(v0=v0, phi=self.d_m, bound=self.dm_bound, time_frozen=time_frozen)


# ---------------------------------------------------------------------------
# Hamiltonian
# ---------------------------------------------------------------------------


def drift_pairing(spec: ControlProblemSpec, t: float, mu: EmpiricalMeasure, p) -> np.ndarray:
    """q = mu( sigma0(t, ., mu) p(mu, .) ), a vector in R^d."""
    atoms = mu.atoms
    n, d = atoms.shape
    pv = np.asarray(p(mu, atoms), dtype=float)
    if pv.ndim == 1:
        pv = pv[:, None]
    if pv.shape != (n, d):
        raise ValueError(f"p must map atoms to (n, d) vectors, got {pv.shape}")
    return mat_vec(spec.sigma0(t, atoms, mu), pv, n, d).mean(axis=0)


def hamiltonian_from_pairing(
    spec: ControlProblemSpec, t: float, mu: EmpiricalMeasure, q: np.ndarray
) -> tuple[float, np.ndarray]:
    if spec.running_cost.quadratic_in_u:
        u = spec.controls.clip(q)
        return float(spec.running_cost.fn(t, mu, u) + u @ q), u
    best_h = -math.inf
    best_u: np.ndarray | None = None
    for u in spec.controls.candidates():
        h = float(spec.running_cost.fn(t, mu, u) + u @ q)
        if h > best_h:  # strict: keeps the lexicographically smallest argmax
            best_h, best_u = h, u
    if best_u is None:
        raise ValueError("empty control grid")
    return best_h, best_u


def hamiltonian(
    spec: ControlProblemSpec, t: float, mu: EmpiricalMeasure, p
) -> tuple[float, np.ndarray]:
    """Value and maximizer of L(t, mu, u) + u . mu(sigma0 p).

    Closed-form box projection for the quadratic-penalty family, else finite
    maximization over the configured control grid with lexicographic-smallest
    tie-break."""
    q = drift_pairing(spec, t, mu, p)
    return hamiltonian_from_pairing(spec, t, mu, q)


def policy_from_value_model(spec: ControlProblemSpec, vm: ValueModel) -> FeedbackPolicy:
    def fn(t: float, mu: EmpiricalMeasure) -> np.ndarray:
        _, u = hamiltonian(spec, t, mu, lambda m, x: vm.d_m(t, m, x))
        return u

    return FeedbackPolicy(fn)


# ---------------------------------------------------------------------------
# rollouts
# ---------------------------------------------------------------------------


def _draw_noise(spec: ControlProblemSpec, grid: TimeGrid, n: int, rep_key: RngKey, scope: str):
    x0 = spec.sample_m0(rep_key.part(0).tagged(f"{scope}:x0").generator(), n)
    dw = idiosyncratic_increments(grid, n, spec.dim, rep_key, role=f"{scope}:idio")
    dw0 = common_increments(grid, spec.dim, rep_key, role=f"{scope}:common")
    return x0, dw, dw0


def _policy_reward(
    spec: ControlProblemSpec,
    grid: TimeGrid,
    policy: FeedbackPolicy,
    x0: np.ndarray,
    dw: np.ndarray,
    dw0: np.ndarray,
) -> tuple[float, int]:
    """Controlled Euler rollout: the control drifts the common driver,
    dX = sigma dW + sigma0 (dW0 + u dt).  Returns (reward, clipped steps)."""
    n, d = x0.shape
    dt = grid.dt
    nodes = grid.nodes
    x = x0
    reward = 0.0
    clipped = 0
    for k in range(grid.steps):
        t = float(nodes[k])
        mu = bare_measure(x)
        u_raw = np.atleast_1d(np.asarray(policy.fn(t, mu), dtype=float))
        u = spec.controls.clip(u_raw)
        if np.any(u != u_raw):
            clipped += 1
        reward += float(spec.running_cost.fn(t, mu, u)) * dt
        drive = np.broadcast_to(dw0[k] + u * dt, (n, d))
        x = x + mat_vec(spec.sigma(t, x, mu), dw[:, k], n, d) + mat_vec(
            spec.sigma0(t, x, mu), drive, n, d
        )
        if not np.isfinite(x).all():
            raise FloatingPointError(f"controlled state blew up at t={t!r}")
    reward += float(spec.terminal_cost(EmpiricalMeasure(x)))
    return reward, clipped


def _word_rewards_batched(
    spec: ControlProblemSpec,
    grid: TimeGrid,
    u_by_step: np.ndarray,  # (steps, words, d), already clipped
    cost_integrals: np.ndarray,  # (words,)
    x0: np.ndarray,
    dw: np.ndarray,
    dw0: np.ndarray,
) -> np.ndarray:
    """All open-loop words at once on shared noise.

    Only valid when coefficients and running cost never read the measure
    (their outputs then broadcast identically across words); callers check
    the spec flags."""
    n, d = x0.shape
    n_words = u_by_step.shape[1]
    dt = grid.dt
    nodes = grid.nodes
    x = np.broadcast_to(x0, (n_words, n, d)).copy()
    rewards = cost_integrals.copy()
    for k in range(grid.steps):
        t = float(nodes[k])
        sig = np.asarray(spec.sigma(t, x.reshape(n_words * n, d), None), dtype=float)
        sig0 = np.asarray(spec.sigma0(t, x.reshape(n_words * n, d), None), dtype=float)
        if sig.ndim > 2 or sig0.ndim > 2:
            raise ValueError("batched rollout supports scalar or constant-matrix volatilities")
        drive = (dw0[k] + u_by_step[k] * dt)[:, None, :]  # (words, 1, d)
        if d == 1:
            x = x + sig * dw[:, k] + sig0 * drive
        else:
            sig_m = sig * np.eye(d) if sig.ndim == 0 else sig
            sig0_m = sig0 * np.eye(d) if sig0.ndim == 0 else sig0
            x = x + dw[:, k] @ sig_m.T + drive @ sig0_m.T
        if not np.isfinite(x).all():
            raise FloatingPointError(f"controlled state blew up at t={t!r}")
    for wi in range(n_words):
        rewards[wi] += float(spec.terminal_cost(EmpiricalMeasure(x[wi])))
    return rewards


@dataclass(frozen=True)
class RolloutEstimate:
    j: float
    half_width: float  # 1.96 * stderr
    rewards: np.ndarray
    clipped_steps: int


def rollout_feedback(
    spec: ControlProblemSpec,
    grid: TimeGrid,
    policy: FeedbackPolicy,
    n_particles: int,
    replications: int,
    key: RngKey,
    scope: str = "control",
    threads: int = 1,
) -> RolloutEstimate:
    """Monte Carlo value of a feedback policy over independent common-noise
    replications."""
    if n_particles < 2 or replications < 2:
        raise ValueError("need at least 2 particles and 2 replications")

    def one(rep: int) -> tuple[float, int]:
        rep_key = key.rep(rep)
        x0, dw, dw0 = _draw_noise(spec, grid, n_particles, rep_key, scope)
        return _policy_reward(spec, grid, policy, x0, dw, dw0)

    results = pmap(one, range(replications), threads)
    rewards = np.array([r for r, _ in results])
    clipped = sum(c for _, c in results)
    j = float(rewards.mean())
    hw = float(1.96 * rewards.std(ddof=1) / np.sqrt(replications))
    return RolloutEstimate(j=j, half_width=hw, rewards=rewards, clipped_steps=clipped)


@dataclass(frozen=True)
class BruteForceResult:
    best_j: float
    best_word: tuple
    words: list[tuple]
    j_by_word: np.ndarray
    stderr_by_word: np.ndarray

    def table_rows(self) -> list[tuple]:
        return [
            ("|".join(repr(float(u)) for u in w), float(j), float(s))
            for w, j, s in zip(self.words, self.j_by_word, self.stderr_by_word)
        ]


def bruteforce_openloop(
    spec: ControlProblemSpec,
    grid: TimeGrid,
    u_values: Sequence[float],
    pieces: int,
    n_particles: int,
    replications: int,
    key: RngKey,
    scope: str = "control",
    guard: int = 100_000,
    threads: int = 1,
) -> BruteForceResult:
    """Evaluate every deterministic piecewise-constant control word.

    All words share the per-replication noise (and the same streams as
    `rollout_feedback` under the same scope), so word comparisons are
    common-random-number comparisons.  Enumeration order is lexicographic in
    the given value order; ties keep the earliest word."""
    if len(u_values) < 1 or pieces < 1:
        raise ValueError("need a non-empty value grid and at least one piece")
    n_words = len(u_values) ** pieces
    if n_words > guard:
        raise EnumerationGuardError(
            f"{n_words} control words exceed the enumeration guard {guard}"
        )
    words = list(itertools.product([float(u) for u in u_values], repeat=pieces))
    batched = spec.coefficients_measure_free and spec.running_cost.mu_free
    if batched:
        # the piece index of step k must match word_policy's time lookup
        u_by_step = np.empty((grid.steps, n_words, spec.dim))
        cost_integrals = np.zeros(n_words)
        for wi, word in enumerate(words):
            policy = word_policy(word, grid.horizon, pieces)
            acc = 0.0
            for k in range(grid.steps):
                t = float(grid.nodes[k])
                u = spec.controls.clip(policy.fn(t, None))
                u_by_step[k, wi] = u
                acc += float(spec.running_cost.fn(t, None, u)) * grid.dt
            cost_integrals[wi] = acc

    def one(rep: int) -> np.ndarray:
        rep_key = key.rep(rep)
        x0, dw, dw0 = _draw_noise(spec, grid, n_particles, rep_key, scope)
        if batched:
            return _word_rewards_batched(spec, grid, u_by_step, cost_integrals, x0, dw, dw0)
        out = np.empty(n_words)
        for wi, word in enumerate(words):
            policy = word_policy(word, grid.horizon, pieces)
            out[wi], _ = _policy_reward(spec, grid, policy, x0, dw, dw0)
        return out

    rewards = np.stack(pmap(one, range(replications), threads))  # (reps, words)
    j_by_word = rewards.mean(axis=0)
    stderr = rewards.std(axis=0, ddof=1) / np.sqrt(replications)
    best = int(np.argmax(j_by_word))  # first maximum = lexicographically smallest
    return BruteForceResult(
        best_j=float(j_by_word[best]),
        best_word=words[best],
        words=words,
        j_by_word=j_by_word,
        stderr_by_word=stderr,
    )


# ---------------------------------------------------------------------------
# duality
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DualityStats:
    """Per-replication residuals of the pathwise certificate inequality
    v0 + int rho(sigma0 phi) dX0 - g(rho_T) - int H(t, rho, phi) dt >= 0,
    sampled under the driftless reference measure."""

    residuals: np.ndarray
    tol: float
    lr_inverse: np.ndarray | None = None

    @property
    def min(self) -> float:
        return float(self.residuals.min())

    @property
    def median(self) -> float:
        return float(np.median(self.residuals))

    @property
    def fraction_ok(self) -> float:
        return float(np.mean(self.residuals >= -self.tol))

    @property
    def accepted(self) -> bool:
        return self.fraction_ok == 1.0


def duality_residual(
    spec: ControlProblemSpec,
    grid: TimeGrid,
    cert: DualCertificate,
    n_particles: int,
    replications: int,
    key: RngKey,
    tol: float,
    policy: FeedbackPolicy | None = None,
    scope: str = "dual",
    threads: int = 1,
) -> DualityStats:
    """Simulate the conditional particle system under the driftless reference
    dynamics (the control enters through the Hamiltonian only) and compute
    the certificate residual per replication.

    When a policy is given, the inverse likelihood ratio of its induced
    measure is accumulated along each path for the change-of-measure bound
    check."""
    dt = grid.dt
    nodes = grid.nodes

    def one(rep: int) -> tuple[float, float]:
        rep_key = key.rep(rep)
        x0, dw, dx0 = _draw_noise(spec, grid, n_particles, rep_key, scope)
        n, d = x0.shape
        x = x0
        stoch = 0.0
        h_int = 0.0
        lr_log = 0.0
        for k in range(grid.steps):
            t = float(nodes[k])
            mu = bare_measure(x)
            phi_vals = cert.phi_at(t, mu, x)
            paired = mat_vec(spec.sigma0(t, x, mu), phi_vals, n, d).mean(axis=0)
            stoch += float(paired @ dx0[k])
            h, _ = hamiltonian_from_pairing(spec, t, mu, paired)
            h_int += h * dt
            if policy is not None:
                u = spec.controls.clip(policy.fn(t, mu))
                lr_log += float(-u @ dx0[k] + 0.5 * (u @ u) * dt)
            drive = np.broadcast_to(dx0[k], (n, d))
            x = x + mat_vec(spec.sigma(t, x, mu), dw[:, k], n, d) + mat_vec(
                spec.sigma0(t, x, mu), drive, n, d
            )
        residual = cert.v0 + stoch - float(spec.terminal_cost(EmpiricalMeasure(x))) - h_int
        return residual, math.exp(lr_log)

    results = pmap(one, range(replications), threads)
    residuals = np.array([r for r, _ in results])
    lr_inverse = np.array([g for _, g in results]) if policy is not None else None
    return DualityStats(residuals=residuals, tol=tol, lr_inverse=lr_inverse)


# ---------------------------------------------------------------------------
# value-model verification
# ---------------------------------------------------------------------------


def value_model_consistency(
    vm: ValueModel,
    key: RngKey,
    dim: int = 1,
    n_pairs: int = 8,
    n_atoms: int = 16,
    quad_steps: int = 64,
    horizon: float = 1.0,
) -> float:
    """Residual of the segment identity between V and its measure derivative
    along same-index atom interpolations; near zero for a consistent pair."""
    gen = key.generator()
    worst = 0.0
    for _ in range(n_pairs):
        t = float(gen.uniform(0.0, horizon))
        a = gen.standard_normal((n_atoms, dim))
        b = gen.standard_normal((n_atoms, dim))
        delta = b - a
        lhs = vm.value(t, EmpiricalMeasure(b)) - vm.value(t, EmpiricalMeasure(a))
        acc = 0.0
        for i in range(quad_steps):
            s = (i + 0.5) / quad_steps
            atoms = a + s * delta
            dm = np.asarray(vm.d_m(t, EmpiricalMeasure(atoms), atoms), dtype=float)
            if dm.ndim == 1:
                dm = dm[:, None]
            acc += float(np.mean(np.sum(dm * delta, axis=1)))
        worst = max(worst, abs(lhs - acc / quad_steps))
    return worst


@dataclass(frozen=True)
class VerificationReport:
    value0: float
    j_feedback: float
    ci: float
    j_brute: float
    best_word: tuple
    brute_rows: list[tuple]
    residual_min: float
    residual_median: float
    residual_fraction: float
    tol: float
    median_tol: float
    bias_budget: float
    consistency_gap: float
    consistency_tol: float
    girsanov_bound: float
    girsanov_mean: float
    girsanov_half_width: float
    clipped_steps: int
    flags: dict[str, bool]

    @property
    def passed(self) -> bool:
        return all(
            self.flags[name]
            for name in ("value_matches_feedback", "brute_below_feedback", "duality_fraction_one", "consistency_ok")
        )

    def to_json_dict(self) -> dict:
        return {
            "pass": bool(self.passed),
            "value_at_m0": self.value0,
            "j_feedback": self.j_feedback,
            "ci_half_width": self.ci,
            "j_brute": self.j_brute,
            "best_word": list(self.best_word),
            "residuals": {
                "min": self.residual_min,
                "median": self.residual_median,
                "fraction_ok": self.residual_fraction,
                "tol": self.tol,
                "median_tol": self.median_tol,
            },
            "bias_budget": self.bias_budget,
            "consistency_gap": self.consistency_gap,
            "girsanov": {
                "bound": self.girsanov_bound,
                "lr_inverse_mean": self.girsanov_mean,
                "half_width": self.girsanov_half_width,
            },
            "clipped_steps": self.clipped_steps,
            "flags": {k: bool(v) for k, v in self.flags.items()},
        }


def verify_value(
    spec: ControlProblemSpec,
    grid: TimeGrid,
    vm: ValueModel,
    n_particles: int,
    replications: int,
    key: RngKey,
    brute_values: Sequence[float],
    brute_pieces: int = 2,
    tol_mult: float = 1.5,
    median_tol_mult: float = 3.0,
    bias_mult: float = 2.0,
    consistency_tol: float = 1e-6,
    threads: int = 1,
) -> VerificationReport:
    """End-to-end check of a candidate value model.

    Synthesizes the Hamiltonian-maximizing feedback policy from the model's
    measure derivative, estimates its value, compares with the open-loop
    enumeration baseline, and tests the model-induced dual certificate
    pathwise.  The feedback rollout and the enumeration share noise streams,
    so a word that coincides with the synthesized policy reproduces its value
    exactly."""
    dt = grid.dt
    scale = math.sqrt(dt) + 1.0 / math.sqrt(n_particles)
    tol = tol_mult * scale
    median_tol = median_tol_mult * scale
    bias_budget = bias_mult * (dt + 1.0 / math.sqrt(n_particles))

    m0_ref = EmpiricalMeasure(spec.sample_m0(key.part(0).tagged("m0ref").generator(), n_particles))
    value0 = float(vm.value(0.0, m0_ref))

    consistency_gap = value_model_consistency(vm, key.tagged("vmprobe"), dim=spec.dim)

    policy = policy_from_value_model(spec, vm)
    rollout = rollout_feedback(spec, grid, policy, n_particles, replications, key, threads=threads)
    brute = bruteforce_openloop(
        spec, grid, brute_values, brute_pieces, n_particles, replications, key, threads=threads
    )
    cert = vm.certificate(v0=value0)
    dual = duality_residual(
        spec, grid, cert, n_particles, replications, key, tol, policy=policy, threads=threads
    )

    ubar = spec.controls.max_abs()
    girsanov_bound = math.exp(grid.horizon * ubar**2)
    lr = dual.lr_inverse if dual.lr_inverse is not None else np.array([1.0])
    girsanov_mean = float(lr.mean())
    girsanov_hw = float(1.96 * lr.std(ddof=1) / np.sqrt(lr.size)) if lr.size > 1 else 0.0

    tested_values = np.append(brute.j_by_word, rollout.j)
    flags = {
        "value_matches_feedback": abs(rollout.j - value0) <= rollout.half_width + bias_budget,
        "brute_below_feedback": brute.best_j <= rollout.j + rollout.half_width,
        "duality_fraction_one": dual.accepted,
        "duality_median_small": abs(dual.median) <= median_tol,
        "consistency_ok": consistency_gap <= consistency_tol,
        "weak_duality": (not dual.accepted) or bool(np.all(value0 + tol >= tested_values)),
        "girsanov_ok": girsanov_mean <= girsanov_bound + girsanov_hw,
    }
    return VerificationReport(
        value0=value0,
        j_feedback=rollout.j,
        ci=rollout.half_width,
        j_brute=brute.best_j,
        best_word=brute.best_word,
        brute_rows=brute.table_rows(),
        residual_min=dual.min,
        residual_median=dual.median,
        residual_fraction=dual.fraction_ok,
        tol=tol,
        median_tol=median_tol,
        bias_budget=bias_budget,
        consistency_gap=consistency_gap,
        consistency_tol=consistency_tol,
        girsanov_bound=girsanov_bound,
        girsanov_mean=girsanov_mean,
        girsanov_half_width=girsanov_hw,
        clipped_steps=rollout.clipped_steps,
        flags=flags,
    )
