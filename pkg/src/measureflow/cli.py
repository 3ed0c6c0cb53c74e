"""Batch command-line front end.

    measureflow <qcov|ito-verify|control|derivative-check> --config <path>
                [--seed S] [--out DIR] [--threads N]

Each command reads a flat key-value config, runs one experiment, writes CSV
and JSON reports into the output directory, prints a one-line summary and
exits 0 on a passing verdict, 1 on a failing verdict, 2 on a config error,
3 on a runtime error.  Reports are byte-identical for identical configs and
seeds, for any thread count; delivery knobs (output directory, threads) are
excluded from the config echo for that reason.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig
from .control import (
    BoxControls,
    ControlProblemSpec,
    EnumerationGuardError,
    verify_value,
)
from .functionals import (
    build_functional,
    flat_derivative_check,
    lions_fd_gap,
    validate_functional,
)
from .grids import SamplePath, build_semimartingale, make_grid, sample_brownian
from .ito import (
    gamma_orthogonality,
    oracle_gap_stats,
    residual_sup_stats,
    standard_scenario,
)
from .measures import EmpiricalMeasure
from .regularization import deviation_report, orthogonality_test
from .registry import (
    RegistryError,
    build_coefficient,
    build_initial_law,
    build_running_cost,
    build_terminal_cost,
    build_value_model,
)
from .rng import RngKey

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

_ECHO_EXCLUDED = ("out",)  # delivery knobs stay out of report payloads


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _write_csv(path: Path, header: str, rows) -> None:
    lines = [header]
    for row in rows:
        lines.append(",".join(repr(float(v)) if isinstance(v, float) else str(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def _payload(command: str, cfg: ExperimentConfig, body: dict) -> dict:
    echo = {k: v for k, v in cfg.echo().items() if k not in _ECHO_EXCLUDED}
    return {"command": command, "version": __version__, "config_echo": echo, **body}


def _eps_ladder(cfg: ExperimentConfig) -> tuple[float, ...]:
    horizon = cfg.get_float("T", 1.0, positive=True)
    default = tuple(horizon * 2.0**-p for p in range(4, 9))
    ladder = cfg.get_floats("eps_ladder", default)
    if any(b >= a for a, b in zip(ladder[:-1], ladder[1:])):
        raise ConfigError("eps_ladder must be strictly decreasing")
    return ladder


def _base_key(cfg: ExperimentConfig) -> RngKey:
    return RngKey(cfg.get_int("seed", 0))


# ---------------------------------------------------------------------------
# qcov
# ---------------------------------------------------------------------------


def cmd_qcov(cfg: ExperimentConfig, out_dir: Path, threads: int) -> tuple[int, str]:
    scenario = cfg.get_str("scenario")
    horizon = cfg.get_float("T", 1.0, positive=True)
    steps = cfg.get_int("K", 4096, minimum=2)
    dim = cfg.get_int("d", 1, minimum=1)
    reps = cfg.get_int("replications", 64, minimum=1)
    theta = cfg.get_float("theta", 0.05, positive=True)
    ladder = _eps_ladder(cfg)
    grid = make_grid(horizon, steps)
    key = _base_key(cfg)

    if scenario == "brownian_self_bracket":
        def sampler(rep_key):
            w = sample_brownian(grid, dim, rep_key.tagged("qcov:w"))
            return w, w, lambda times: dim * times  # bracket of a d-dim Brownian path

        report = deviation_report(sampler, "W.W", ladder, reps, key, theta, threads=threads)
    elif scenario == "independent_brownians":
        def sampler(rep_key):
            a = sample_brownian(grid, dim, rep_key.tagged("qcov:a"))
            b = sample_brownian(grid, dim, rep_key.tagged("qcov:b"))
            return a, b, None

        report = deviation_report(sampler, "W.W_indep", ladder, reps, key, theta, threads=threads)
    elif scenario == "semimartingale_bracket":
        from .grids import SemimartingaleSpec

        spec = SemimartingaleSpec(
            drift=build_coefficient(cfg.get_str("drift", "zero"), require_bounded=True).fn,
            sigma=build_coefficient(cfg.get_str("sigma", "const:1.0"), require_bounded=True).fn,
            sigma0=build_coefficient(cfg.get_str("sigma_common", "zero"), require_bounded=True).fn,
            x0=build_initial_law(cfg.get_str("x0", "dirac:0.0")),
            dim=dim,
        )

        def sampler(rep_key):
            gen = rep_key.tagged("qcov:x0").generator()
            x0 = spec.sample_x0(gen, 1)[0]
            w = sample_brownian(grid, dim, rep_key.tagged("qcov:w"))
            w0 = sample_brownian(grid, dim, rep_key.tagged("qcov:w0"))
            x, _ = build_semimartingale(spec, grid, w, w0, x0)
            rates = np.zeros(grid.steps + 1)
            for k in range(grid.steps):
                t = float(grid.nodes[k])
                state = x.values[k][None, :]
                sig = np.asarray(spec.sigma(t, state), dtype=float)
                sig0 = np.asarray(spec.sigma0(t, state), dtype=float)
                rates[k + 1] = rates[k] + (np.sum(sig**2) + np.sum(sig0**2)) * grid.dt
            return x, x, lambda times: rates[np.rint(times / grid.dt).astype(int)]

        report = deviation_report(sampler, "X.X", ladder, reps, key, theta, threads=threads)
    elif scenario == "orthogonality_drift_vs_w":
        def sampler(rep_key):
            w = sample_brownian(grid, dim, rep_key.tagged("qcov:w"))
            ramp = SamplePath(grid, np.repeat(grid.nodes[:, None], dim, axis=1))
            return ramp, {"W": w}

        report = orthogonality_test(sampler, ladder, reps, key, theta, threads=threads)
    elif scenario == "orthogonality_w_vs_w":
        def sampler(rep_key):
            w = sample_brownian(grid, dim, rep_key.tagged("qcov:w"))
            return w, {"W": w}

        report = orthogonality_test(sampler, ladder, reps, key, theta, threads=threads)
    else:
        raise ConfigError(f"unknown qcov scenario {scenario!r}")

    _write_csv(out_dir / "qcov_ladder.csv", "epsilon,N_label,median,q90", report.rows())
    _write_json(out_dir / "qcov_report.json", _payload("qcov", cfg, report.to_json_dict()))
    status = "PASS" if report.passed else "FAIL"
    return (EXIT_PASS if report.passed else EXIT_FAIL), (
        f"qcov {scenario}: {status} (worst median {report.worst_stat:.4g}, theta {theta})"
    )


# ---------------------------------------------------------------------------
# ito-verify
# ---------------------------------------------------------------------------


def cmd_ito_verify(cfg: ExperimentConfig, out_dir: Path, threads: int) -> tuple[int, str]:
    name = cfg.get_str("scenario")
    horizon = cfg.get_float("T", 1.0, positive=True)
    steps = cfg.get_int("K", 1024, minimum=2)
    n_particles = cfg.get_int("N", 1000, minimum=2)
    reps = cfg.get_int("replications", 32, minimum=1)
    theta = cfg.get_float("theta", 0.05, positive=True)
    tol_mult = cfg.get_float("gamma_tol_mult", 3.0, positive=True)
    corrupt = cfg.get_bool("corrupt_common_integral", False)
    ladder = _eps_ladder(cfg)
    grid = make_grid(horizon, steps)
    key = _base_key(cfg)

    overrides = {}
    for field in ("functional", "drift", "sigma", "sigma_common", "x0"):
        if cfg.get(field) is not None:
            overrides[field] = cfg.get_str(field)
    scenario = standard_scenario(
        name, grid, n_particles, overrides=overrides, corrupt_factor=0.5 if corrupt else None
    )
    # reject unbounded overrides up front (standard_scenario validates too;
    # this keeps the error in the config stage)
    for field in ("drift", "sigma", "sigma_common"):
        if field in overrides:
            build_coefficient(overrides[field], require_bounded=True)

    tol = tol_mult * (np.sqrt(grid.dt) + n_particles**-0.5)
    sup_stats = residual_sup_stats(scenario, reps, key, threads=threads)
    gamma_median = float(np.median(sup_stats))
    gamma_ok = gamma_median <= tol

    report = gamma_orthogonality(scenario, ladder, reps, key, theta=theta, threads=threads)

    functional = scenario.functional
    oracle_available = (
        cfg.get_bool("compare_oracle", True)
        and not functional.depends_on_y
        and functional.d2f_dz2 is not None
        and all(tf.hess is not None for tf in functional.tests)
    )
    if oracle_available:
        gaps = oracle_gap_stats(scenario, reps, key, threads=threads)
        oracle_median = float(np.median(gaps))
        oracle_ok = oracle_median <= tol
    else:
        oracle_median = None
        oracle_ok = True

    first = scenario.sample(key.rep(0))
    with open(out_dir / "ito_decomposition.csv", "w", newline="\n") as fp:
        first.decomposition.write_csv(fp)
    _write_csv(out_dir / "ito_ladder.csv", "epsilon,N_label,median,q90", report.rows())

    passed = bool(gamma_ok and report.passed and oracle_ok)
    body = {
        "pass": passed,
        "scenario": name,
        "gamma_sup_median": gamma_median,
        "gamma_tol": float(tol),
        "gamma_ok": bool(gamma_ok),
        "orthogonality": report.to_json_dict(),
        "oracle_gap_median": oracle_median,
        "oracle_ok": bool(oracle_ok),
        "identity_gap": first.decomposition.identity_gap(),
    }
    _write_json(out_dir / "ito_report.json", _payload("ito-verify", cfg, body))
    status = "PASS" if passed else "FAIL"
    return (EXIT_PASS if passed else EXIT_FAIL), (
        f"ito-verify {name}: {status} (sup-residual median {gamma_median:.4g}, tol {tol:.4g})"
    )


# ---------------------------------------------------------------------------
# control
# ---------------------------------------------------------------------------


def cmd_control(cfg: ExperimentConfig, out_dir: Path, threads: int) -> tuple[int, str]:
    horizon = cfg.get_float("T", 1.0, positive=True)
    steps = cfg.get_int("K", 256, minimum=2)
    n_particles = cfg.get_int("N", 1000, minimum=2)
    reps = cfg.get_int("replications", 256, minimum=2)
    u_min = cfg.get_float("u_min", -1.0)
    u_max = cfg.get_float("u_max", 1.0)
    if u_min > u_max:
        raise ConfigError("u_min must not exceed u_max")
    grid_points = cfg.get_int("u_grid_points", 33, minimum=1)
    brute_values = cfg.get_floats("brute_grid", (-1.0, -0.5, 0.0, 0.5, 1.0))
    brute_pieces = cfg.get_int("brute_pieces", 2, minimum=1)
    guard = cfg.get_int("enumeration_guard", 100_000, minimum=1)
    if len(brute_values) ** brute_pieces > guard:
        raise ConfigError(
            f"enumeration of {len(brute_values) ** brute_pieces} words exceeds guard {guard}"
        )

    spec = ControlProblemSpec(
        horizon=horizon,
        dim=1,
        sigma=build_coefficient(cfg.get_str("sigma", "const:1.0"), require_bounded=True).measure_free(),
        sigma0=build_coefficient(cfg.get_str("sigma_common", "const:1.0"), require_bounded=True).measure_free(),
        controls=BoxControls(np.array([u_min]), np.array([u_max]), grid_points=grid_points),
        running_cost=build_running_cost(cfg.get_str("running_cost", "quadratic_penalty")),
        terminal_cost=build_terminal_cost(cfg.get_str("terminal_cost", "mean_terminal")),
        m0=build_initial_law(cfg.get_str("m0", "dirac:0.0")),
        coefficients_measure_free=True,
        coefficient_bound=max(
            build_coefficient(cfg.get_str("sigma", "const:1.0")).bound,
            build_coefficient(cfg.get_str("sigma_common", "const:1.0")).bound,
        ),
    )
    vm_tag = cfg.get_str("value_model", "lq_exact")
    if ":" not in vm_tag and vm_tag.startswith("lq_"):
        vm_tag = f"{vm_tag}:{horizon!r}"
    vm = build_value_model(vm_tag)

    grid = make_grid(horizon, steps)
    report = verify_value(
        spec,
        grid,
        vm,
        n_particles,
        reps,
        _base_key(cfg),
        brute_values=brute_values,
        brute_pieces=brute_pieces,
        tol_mult=cfg.get_float("tol_mult", 1.5, positive=True),
        median_tol_mult=cfg.get_float("median_tol_mult", 3.0, positive=True),
        bias_mult=cfg.get_float("bias_mult", 2.0, positive=True),
        threads=threads,
    )

    _write_csv(out_dir / "control_brute.csv", "word,J,stderr", report.brute_rows)
    _write_json(out_dir / "control_report.json", _payload("control", cfg, report.to_json_dict()))
    status = "PASS" if report.passed else "FAIL"
    return (EXIT_PASS if report.passed else EXIT_FAIL), (
        f"control: {status} (V={report.value0:.4g}, J_feedback={report.j_feedback:.4g}"
        f"+-{report.ci:.4g}, J_brute={report.j_brute:.4g})"
    )


# ---------------------------------------------------------------------------
# derivative-check
# ---------------------------------------------------------------------------


def cmd_derivative_check(cfg: ExperimentConfig, out_dir: Path, threads: int) -> tuple[int, str]:
    raw = cfg.get("functionals")
    if raw is None:
        raise ConfigError("missing required config key 'functionals'")
    names = raw if isinstance(raw, tuple) else (raw,)
    names = tuple(str(n).strip() for n in names if str(n).strip())
    if not names:
        raise ConfigError("functional list must be non-empty")
    pairs = cfg.get_int("pairs", 100, minimum=1)
    atoms = cfg.get_int("atoms", 32, minimum=1)
    quad_steps = cfg.get_int("quad_steps", 256, minimum=1)
    fd_tol = cfg.get_float("fd_tol", 1e-6, positive=True)
    center = cfg.get_float("smooth_cdf_center", 0.0)
    width = cfg.get_float("smooth_cdf_width", 1.0, positive=True)
    key = _base_key(cfg)

    rows = []
    all_ok = True
    for name in names:
        params = (center, width) if name == "smooth_cdf" else ()
        functional = build_functional(name, params)
        try:
            validate_functional(functional, key.tagged(f"fd:{name}"), tol=fd_tol)
            supplied_ok = True
        except ValueError:
            supplied_ok = False
        gen = key.tagged(f"pairs:{name}").generator()
        worst_flat = 0.0
        worst_lions = 0.0
        for _ in range(pairs):
            mu = EmpiricalMeasure(gen.standard_normal((atoms, 1)))
            nu = EmpiricalMeasure(gen.standard_normal((atoms, 1)))
            t = float(gen.uniform(0.0, 1.0))
            y = gen.standard_normal(1)
            worst_flat = max(worst_flat, flat_derivative_check(functional, t, y, mu, nu, quad_steps))
            worst_lions = max(
                worst_lions, lions_fd_gap(functional, t, y, mu, gen.standard_normal((4, 1)))
            )
        ok = supplied_ok and worst_flat <= fd_tol and worst_lions <= fd_tol
        all_ok = all_ok and ok
        rows.append((name, worst_flat, worst_lions, "ok" if ok else "fail"))

    _write_csv(out_dir / "derivative_check.csv", "functional,flat_residual,lions_fd_gap,status", rows)
    body = {
        "pass": bool(all_ok),
        "fd_tol": fd_tol,
        "results": [
            {"functional": n, "flat_residual": f, "lions_fd_gap": l, "ok": s == "ok"}
            for n, f, l, s in rows
        ],
    }
    _write_json(out_dir / "derivative_report.json", _payload("derivative-check", cfg, body))
    status = "PASS" if all_ok else "FAIL"
    return (EXIT_PASS if all_ok else EXIT_FAIL), f"derivative-check: {status} ({len(names)} functionals)"


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

_COMMANDS = {
    "qcov": cmd_qcov,
    "ito-verify": cmd_ito_verify,
    "control": cmd_control,
    "derivative-check": cmd_derivative_check,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="measureflow", description=__doc__)
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True, help="path to a key-value config file")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--out", default=None, help="output directory (default: config 'out' or 'reports')")
    parser.add_argument("--threads", type=int, default=1, help="replication fan-out width")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = ExperimentConfig.from_file(args.config)
        if args.seed is not None:
            cfg = cfg.updated(seed=args.seed)
        out_dir = Path(args.out if args.out is not None else cfg.get_str("out", "reports"))
        out_dir.mkdir(parents=True, exist_ok=True)
        exit_code, summary = _COMMANDS[args.command](cfg, out_dir, max(1, args.threads))
    except (ConfigError, RegistryError, EnumerationGuardError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001  - runtime failures map to exit 3
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(summary)
    return exit_code


if __name__ == "__main__":
    sys.exit(main())
