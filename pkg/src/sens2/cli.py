"""Config-driven command-line harness.

    sens2 run   --config cfg.json [--method adjoint2|forward2|fd|all] [--out r.json] [--csv h.csv]
    sens2 check --model heat [--n-cells 50]
    sens2 bench --model heat --sizes 25,50,100

Exit codes: 0 ok, 2 config error, 3 solver error, 4 verification failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass
from typing import Any

import numpy as np

from .benchmarks import BENCHMARK_NAMES, get_benchmark
from .first_order import gradient_adjoint, gradient_forward, prepare_state
from .model import DomainError, Model
from .newton import (
    NewtonOptions,
    NonConvergenceError,
    SingularJacobianError,
    SolveLedger,
    solve_forward,
)
from .report import ACCOUNTING_NOTE, SensitivityReport, propagate_moments, validate_covariance
from .second_order import HessianMatrix, hessian_full, hessian_via_lfss
from .verification import (
    FdScheme,
    assert_ledger_counts,
    check_model_derivatives,
    fd_gradient,
    fd_gradient_of_adjoint_gradient,
    fd_hessian,
    make_probe_cache,
    negative_control_check,
    rel_max_error,
)

METHODS = ("adjoint2", "forward2", "fd", "all")

# Pairwise oracle tolerances asserted by method=all (relative to matrix scale).
ALL_TOLERANCES = {
    "gradient_forward_vs_adjoint": 1e-10,
    "gradient_fd_central_vs_adjoint": 1e-6,
    "hessian_lfss_vs_adjoint": 1e-10,
    "hessian_fd_adjoint_grad_vs_adjoint": 1e-5,
    "hessian_fd_central_vs_adjoint": 1e-4,
}


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration."""


class VerificationFailure(RuntimeError):
    """An oracle comparison or callback check exceeded its tolerance."""


@dataclass
class RunConfig:
    model: str
    n_cells: int | None = None
    params: list[float] | None = None
    method: str = "adjoint2"
    fd_kind: str = "forward"
    fd_c: float | None = None
    newton: NewtonOptions = NewtonOptions()
    covariance: list[list[float]] | None = None
    out: str | None = None
    csv: str | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.fd_kind not in ("forward", "central"):
            raise ConfigError(f"fd kind must be forward or central, got {self.fd_kind!r}")


def load_config(path: str) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path!r} is not valid JSON: line {exc.lineno}: {exc.msg}") from exc
    return config_from_dict(data, path)


def config_from_dict(data: dict[str, Any], where: str = "<dict>") -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: top level must be a JSON object")
    known = {"model", "n_cells", "params", "method", "fd", "newton", "covariance", "out", "csv"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{where}: unknown config fields {sorted(unknown)}")
    if "model" not in data:
        raise ConfigError(f"{where}: missing required field 'model'")
    fd = data.get("fd") or {}
    newton_kwargs = data.get("newton") or {}
    try:
        newton = NewtonOptions(**newton_kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: bad 'newton' options: {exc}") from exc
    return RunConfig(
        model=data["model"],
        n_cells=data.get("n_cells"),
        params=data.get("params"),
        method=data.get("method", "adjoint2"),
        fd_kind=fd.get("kind", "forward"),
        fd_c=fd.get("c"),
        newton=newton,
        covariance=data.get("covariance"),
        out=data.get("out"),
        csv=data.get("csv"),
    )


def _build_model(config: RunConfig) -> tuple[Model, np.ndarray]:
    try:
        model = get_benchmark(config.model, config.n_cells)
    except (KeyError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    params = model.nominal_params
    if config.params is not None:
        params = np.asarray(config.params, dtype=float)
        if params.shape != (model.n_param,):
            raise ConfigError(
                f"params has length {params.size}, model {config.model!r} "
                f"expects {model.n_param}"
            )
    return model, params


def _adjoint_pass(model, params, opts, ledger):
    if model.n_param == 0:
        # Nothing to differentiate: nominal solve only.
        u = solve_forward(model, params, model.default_guess(), opts, ledger)
        return u, np.zeros(model.n_state), None, np.zeros(0), HessianMatrix(np.zeros((0, 0)), 0.0)
    state = prepare_state(model, params, opts, ledger)
    grad = gradient_adjoint(model, state.u, params, state.psi, ledger)
    hess = hessian_full(model, state.u, params, state.psi, state.fact, ledger)
    return state.u, state.psi, state.fact, grad, hess


def run(config: RunConfig) -> SensitivityReport:
    """Execute one configured sensitivity computation and emit the report.

    method=all runs the adjoint pass as the primary result, re-computes the
    gradient and Hessian along every oracle route with its own ledger, and
    fails loudly (:class:`VerificationFailure`) if any pairwise tolerance is
    violated — after writing the report, so the evidence is on disk.
    """
    model, params = _build_model(config)
    sigma = None
    if config.covariance is not None:
        try:
            sigma = validate_covariance(config.covariance, model.n_param)
        except ValueError as exc:
            raise ConfigError(f"bad covariance: {exc}") from exc
    opts = config.newton
    ledger = SolveLedger()
    comparisons = None

    if config.method in ("adjoint2", "all") or model.n_param == 0:
        u, psi, fact, grad, hess = _adjoint_pass(model, params, opts, ledger)
    elif config.method == "forward2":
        state = prepare_state(model, params, opts, ledger)
        u, psi, fact = state.u, state.psi, state.fact
        grad = gradient_forward(model, u, params, fact, ledger)
        hess = hessian_via_lfss(model, u, params, psi, fact, ledger)
    else:  # fd
        scheme = FdScheme(config.fd_kind, config.fd_c)
        cache = make_probe_cache(model, params, scheme, opts, ledger, second_order=True)
        grad = fd_gradient(model, params, scheme, opts, ledger, cache=cache)
        hess = fd_hessian(model, params, scheme, opts, ledger, cache=cache)
        u = cache.u_nominal

    if config.method == "all" and model.n_param > 0:
        comparisons = _oracle_comparisons(model, params, opts, u, psi, fact, grad, hess)

    report = SensitivityReport(
        model=config.model,
        method=config.method,
        n_state=model.n_state,
        n_param=model.n_param,
        params=[float(x) for x in params],
        response=float(model.response(u, params)),
        gradient=[float(x) for x in grad],
        hessian_raw=[[float(x) for x in row] for row in np.atleast_2d(hess.h)]
        if model.n_param
        else [],
        hessian_symmetrized=[[float(x) for x in row] for row in np.atleast_2d(hess.symmetrized)]
        if model.n_param
        else [],
        symmetry_residual=float(hess.symmetry_residual),
        ledger={**ledger.as_dict(), "note": ACCOUNTING_NOTE},
        options={
            "method": config.method,
            "fd": {"kind": config.fd_kind, "c": config.fd_c},
            "newton": {
                "abs_tol": opts.abs_tol,
                "max_iter": opts.max_iter,
                "damping": opts.damping,
                "max_backtracks": opts.max_backtracks,
            },
        },
        comparisons=comparisons,
    )

    if sigma is not None:
        mean_shift, variance = propagate_moments(grad, hess.symmetrized, sigma)
        report.moments = {"mean_shift": mean_shift, "variance": variance}

    if config.out:
        report.write_json(config.out)
    if config.csv:
        report.write_csv(config.csv)

    if comparisons is not None:
        failed = [c for c in comparisons if not c["passed"]]
        if failed:
            raise VerificationFailure(
                "oracle tolerances violated: "
                + ", ".join(f"{c['name']} error {c['error']:.3e} > {c['tolerance']:.1e}" for c in failed)
            )
    return report


def _oracle_comparisons(model, params, opts, u, psi, fact, grad_adj, hess_adj):
    """Every route recomputed on its own ledger, compared against the adjoint pass."""
    rows = []

    def compare(name, value, reference):
        err = rel_max_error(value, reference)
        rows.append(
            {
                "name": name,
                "error": err,
                "tolerance": ALL_TOLERANCES[name],
                "passed": bool(err <= ALL_TOLERANCES[name]),
            }
        )

    led_fw = SolveLedger()
    compare(
        "gradient_forward_vs_adjoint",
        gradient_forward(model, u, params, fact, led_fw),
        grad_adj,
    )
    compare(
        "gradient_fd_central_vs_adjoint",
        fd_gradient(model, params, FdScheme("central"), opts, SolveLedger()),
        grad_adj,
    )
    compare(
        "hessian_lfss_vs_adjoint",
        hessian_via_lfss(model, u, params, psi, fact, SolveLedger()).h,
        hess_adj.h,
    )
    compare(
        "hessian_fd_adjoint_grad_vs_adjoint",
        fd_gradient_of_adjoint_gradient(model, params, ledger=SolveLedger(), u_nominal=u).h,
        hess_adj.h,
    )
    compare(
        "hessian_fd_central_vs_adjoint",
        fd_hessian(model, params, FdScheme("central"), opts, SolveLedger()).h,
        hess_adj.h,
    )
    return rows


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _cmd_run(args) -> int:
    config = load_config(args.config)
    if args.method:
        config = config_from_dict({**_config_as_dict(config), "method": args.method})
    if args.out:
        config.out = args.out
    if args.csv:
        config.csv = args.csv
    report = run(config)
    if not config.out:
        print(report.to_json())
    else:
        print(f"report written to {config.out}")
    return 0


def _config_as_dict(config: RunConfig) -> dict:
    return {
        "model": config.model,
        "n_cells": config.n_cells,
        "params": config.params,
        "method": config.method,
        "fd": {"kind": config.fd_kind, "c": config.fd_c},
        "newton": {
            "abs_tol": config.newton.abs_tol,
            "max_iter": config.newton.max_iter,
            "damping": config.newton.damping,
            "max_backtracks": config.newton.max_backtracks,
        },
        "covariance": config.covariance,
        "out": config.out,
        "csv": config.csv,
    }


def _cmd_check(args) -> int:
    try:
        model = get_benchmark(args.model, args.n_cells)
    except (KeyError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    ledger = SolveLedger()
    u = solve_forward(model, model.nominal_params, model.default_guess(), NewtonOptions(), ledger)
    report = check_model_derivatives(model, u, model.nominal_params, tol=args.tol, seed=args.seed)
    controls = negative_control_check(model, u, model.nominal_params, tol=args.tol)
    report.negative_controls = controls.negative_controls
    print(f"derivative checks for model {model.name!r} at the nominal solution:")
    print(report.format_text())
    if not report.passed:
        raise VerificationFailure(f"checks failed: {report.failures()}")
    print("all checks passed")
    return 0


def _cmd_bench(args) -> int:
    sizes = [int(s) for s in args.sizes.split(",")] if args.sizes else [None]
    opts = NewtonOptions()
    rows = []
    for size in sizes:
        try:
            model = get_benchmark(args.model, size)
        except (KeyError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        n = model.n_param

        led_adj = SolveLedger()
        t0 = time.perf_counter()
        _adjoint_pass(model, model.nominal_params, opts, led_adj)
        t_adj = time.perf_counter() - t0

        led_fd = SolveLedger()
        t0 = time.perf_counter()
        scheme = FdScheme("forward")
        cache = make_probe_cache(model, model.nominal_params, scheme, opts, led_fd, second_order=True)
        fd_gradient(model, model.nominal_params, scheme, opts, led_fd, cache=cache)
        fd_hessian(model, model.nominal_params, scheme, opts, led_fd, cache=cache)
        t_fd = time.perf_counter() - t0

        adj_ok = assert_ledger_counts(led_adj, n, mode="adjoint").passed
        fd_ok = assert_ledger_counts(led_fd, n, mode="fd").passed
        rows.append(
            {
                "n_state": model.n_state,
                "n_param": n,
                "adjoint_linear_solves": led_adj.total("linear_solves_J")
                + led_adj.total("linear_solves_JT"),
                "adjoint_factorizations": led_adj.total("jacobian_factorizations"),
                "fd_extra_nonlinear_solves": led_fd.by_purpose("nonlinear_solves", "fd_oracle"),
                "expected_fd_extra": (n * n + 3 * n) // 2,
                "counts_ok": adj_ok and fd_ok,
                "t_adjoint_s": t_adj,
                "t_fd_s": t_fd,
            }
        )

    header = (
        f"{'n_state':>8} {'n_param':>8} {'adj solves':>10} {'adj facts':>9} "
        f"{'fd extra':>9} {'expected':>9} {'counts':>7} {'t_adj':>9} {'t_fd':>9}"
    )
    print(f"benchmark {args.model!r} solve-count and timing table")
    print(header)
    for r in rows:
        print(
            f"{r['n_state']:>8} {r['n_param']:>8} {r['adjoint_linear_solves']:>10} "
            f"{r['adjoint_factorizations']:>9} {r['fd_extra_nonlinear_solves']:>9} "
            f"{r['expected_fd_extra']:>9} {'ok' if r['counts_ok'] else 'BAD':>7} "
            f"{r['t_adjoint_s']:>9.4f} {r['t_fd_s']:>9.4f}"
        )
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=2, sort_keys=True)
        print(f"table written to {args.out}")
    if not all(r["counts_ok"] for r in rows):
        raise VerificationFailure("ledger counts deviate from the expected pattern")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sens2",
        description="First- and second-order sensitivity engine for nonlinear models",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a configured sensitivity computation")
    p_run.add_argument("--config", required=True, help="path to a JSON run configuration")
    p_run.add_argument("--method", choices=METHODS, default=None, help="override config method")
    p_run.add_argument("--out", default=None, help="override report output path")
    p_run.add_argument("--csv", default=None, help="also dump the raw Hessian as CSV")
    p_run.set_defaults(func=_cmd_run)

    p_check = sub.add_parser("check", help="validate a model's derivative callbacks")
    p_check.add_argument("--model", required=True, choices=BENCHMARK_NAMES)
    p_check.add_argument("--n-cells", type=int, default=None)
    p_check.add_argument("--tol", type=float, default=1e-5)
    p_check.add_argument("--seed", type=int, default=0)
    p_check.set_defaults(func=_cmd_check)

    p_bench = sub.add_parser("bench", help="solve-count and timing table")
    p_bench.add_argument("--model", required=True, choices=BENCHMARK_NAMES)
    p_bench.add_argument("--sizes", default=None, help="comma-separated n_cells list")
    p_bench.add_argument("--out", default=None, help="write the table as JSON")
    p_bench.set_defaults(func=_cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (NonConvergenceError, SingularJacobianError, DomainError) as exc:
        print(f"solver error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 3
    except VerificationFailure as exc:
        print(f"verification failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
