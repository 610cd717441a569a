"""Command line interface.

Subcommands: run (a plan file or a single model/method pair),
list-models, check (fast estimator and solver self-tests), probe
(acceptance-test replays from a frozen state).
"""

import argparse
import dataclasses
import json
import sys

import numpy as np

from .assessment import AcceptanceParams, required_sample_size
from .core import (
    BaseBatch,
    ConfigurationError,
    VariationalParams,
    elbo_estimate,
    stochastic_gradient,
    stochastic_hvp,
)
from .harness import (
    METHODS,
    load_plan,
    resolve_out_dir,
    run_experiment,
    run_single,
    summary_path,
    summary_to_json,
    trace_path,
    trace_to_csv,
    write_summary_json,
    write_trace_csv,
)
from .loop import OptimizerConfig, init_state, theory_probe
from .objective import as_objective
from .subproblem import QuadraticModel, cauchy_point, solve_tr_exact, solve_tr_krylov
from .zoo import get_model, list_models


def _cmd_list_models(args) -> int:
    for name in list_models():
        print(name)
    return 0


def _cmd_run(args) -> int:
    if args.plan:
        plan = load_plan(args.plan)
        out = resolve_out_dir(plan, args.out)
        run_experiment(plan, out_dir=args.out)
        runs = len(plan.models) * len(plan.methods) * plan.repetitions
        print(f"wrote {runs} runs and report.json to {out}")
        return 0
    if not (args.model and args.method):
        raise ConfigurationError(
            "run needs --plan, or both --model and --method"
        )
    trace, summary = run_single(
        args.model, args.method, args.seed, args.budget
    )
    if args.out:
        tp = trace_path(args.out, args.model, args.method, 0)
        tp.parent.mkdir(parents=True, exist_ok=True)
        write_trace_csv(tp, trace)
        sp = summary_path(args.out, args.model, args.method, 0)
        write_summary_json(sp, summary)
        print(f"wrote {tp} and {sp}")
    elif args.format == "json":
        sys.stdout.write(summary_to_json(summary))
    else:
        sys.stdout.write(trace_to_csv(trace))
    return 0


def _cmd_probe(args) -> int:
    model = get_model(args.model)
    config = OptimizerConfig(seed=args.seed, budget=args.budget)
    objective = as_objective(model)
    state = init_state(objective, config)
    stats = theory_probe(
        model,
        config,
        state.omega,
        delta=args.delta,
        replications=args.replications,
        frozen_proposal=args.mode == "frozen",
        probe_seed=args.seed,
    )
    print(json.dumps(dataclasses.asdict(stats), sort_keys=True, indent=2))
    return 0


def _check_estimators() -> list:
    failures = []
    model = get_model("gaussian2")
    rng = np.random.default_rng(0)
    omega = VariationalParams(
        mu=rng.normal(size=2), rho=0.3 * rng.normal(size=2)
    )
    batch = BaseBatch.draw(0, 0, 4096, 2)
    grad = stochastic_gradient(model, omega, batch).mean_gradient
    h = 1e-6
    vec = omega.as_vector()
    fd = np.empty_like(vec)
    for i in range(vec.size):
        up, dn = vec.copy(), vec.copy()
        up[i] += h
        dn[i] -= h
        fd[i] = (
            elbo_estimate(model, VariationalParams.from_vector(up), batch)
            - elbo_estimate(model, VariationalParams.from_vector(dn), batch)
        ) / (2 * h)
    rel = np.max(np.abs(grad - fd)) / max(1.0, np.max(np.abs(fd)))
    if rel > 1e-5:
        failures.append(f"gradient vs finite differences: rel err {rel:.2e}")

    v = rng.normal(size=4)
    hv = stochastic_hvp(model, omega, batch, v)
    gp = stochastic_gradient(
        model, VariationalParams.from_vector(vec + h * v), batch
    ).mean_gradient
    gm = stochastic_gradient(
        model, VariationalParams.from_vector(vec - h * v), batch
    ).mean_gradient
    fd_hv = (gp - gm) / (2 * h)
    rel = np.max(np.abs(hv - fd_hv)) / max(1.0, np.max(np.abs(fd_hv)))
    if rel > 1e-4:
        failures.append(f"hvp vs finite differences: rel err {rel:.2e}")
    return failures


def _check_subproblem() -> list:
    failures = []
    rng = np.random.default_rng(1)
    for trial in range(20):
        dim = int(rng.integers(2, 7))
        a = rng.normal(size=(dim, dim))
        hess = -(a @ a.T) + rng.normal() * np.eye(dim)
        grad = rng.normal(size=dim)
        delta = float(rng.uniform(0.1, 2.0))
        qm = QuadraticModel(grad, lambda v, H=hess: H @ v, delta)
        step = solve_tr_krylov(qm)
        if np.linalg.norm(step.s) > delta * (1 + 1e-9):
            failures.append(f"trial {trial}: step leaves the region")
        floor = cauchy_point(qm).m_prime
        if step.m_prime < floor - 1e-9 or floor < -1e-12:
            failures.append(f"trial {trial}: below Cauchy improvement")
        exact = solve_tr_exact(grad, hess, delta)
        if exact.m_prime + 1e-9 < step.m_prime:
            failures.append(f"trial {trial}: exact solver beaten by Krylov")
    return failures


def _check_sample_size() -> list:
    failures = []
    ap = AcceptanceParams()
    rng = np.random.default_rng(2)
    for trial in range(10):
        sigma = float(rng.uniform(0.1, 5.0))
        delta = float(rng.uniform(0.05, 2.0))
        m_prime = float(rng.uniform(1.0, 3.0)) * ap.lam * delta**2 / ap.eta
        n = required_sample_size(sigma, m_prime, delta, ap)
        ys = np.concatenate(
            [[-ap.eta * m_prime / 2], np.linspace(-ap.eta * m_prime / 2, 50, 300)]
        )
        for y in ys:
            if ap.eta * m_prime + y <= 0:
                continue
            lhs = np.exp(-n * (ap.eta * m_prime + y) ** 2 / (2 * sigma**2))
            rhs = ap.tau1 * delta**2 / max(ap.tau2 * delta**2 + y, 1e-300)
            if y > -ap.tau2 * delta**2 and lhs > min(rhs, 1.0) + 1e-12:
                failures.append(
                    f"trial {trial}: bound violated at y={y:.3g}"
                )
                break
    return failures


def _cmd_check(args) -> int:
    suites = [
        ("estimators", _check_estimators),
        ("subproblem", _check_subproblem),
        ("sample-size", _check_sample_size),
    ]
    bad = 0
    for name, fn in suites:
        failures = fn()
        if failures:
            bad += 1
            for msg in failures:
                print(f"FAIL {name}: {msg}")
        else:
            print(f"ok {name}")
    return 1 if bad else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trustvi",
        description="Trust-region variational inference benchmark harness.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute a plan file or a single run")
    run.add_argument("--plan", help="experiment plan JSON file")
    run.add_argument("--model", help="zoo model name (single-run mode)")
    run.add_argument("--method", choices=METHODS, help="optimizer to run")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--budget", type=int, default=100_000)
    run.add_argument("--out", help="output directory (overrides TRUSTVI_OUT)")
    run.add_argument(
        "--format",
        choices=("csv", "json"),
        default="csv",
        help="stdout format in single-run mode: trace csv or summary json",
    )
    run.set_defaults(func=_cmd_run)

    lm = sub.add_parser("list-models", help="print registry names")
    lm.set_defaults(func=_cmd_list_models)

    check = sub.add_parser("check", help="run estimator/solver self-tests")
    check.set_defaults(func=_cmd_check)

    probe = sub.add_parser(
        "probe", help="replay acceptance tests from a frozen state"
    )
    probe.add_argument("--model", default="gaussian2")
    probe.add_argument("--seed", type=int, default=0)
    probe.add_argument("--budget", type=int, default=100_000)
    probe.add_argument("--delta", type=float, default=0.5)
    probe.add_argument("--replications", type=int, default=200)
    probe.add_argument("--mode", choices=("frozen", "full"), default="frozen")
    probe.set_defaults(func=_cmd_probe)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except KeyError as exc:
        print(f"error: {exc.args[0]}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
