"""Experiment orchestration: plans, derived seeds, persistence, reports.

A plan names models, methods, and a repetition count; every run gets its
own seed derived from the master seed so runs are independent yet fully
reproducible.  Traces go to CSV, per-run summaries and the comparison
report to JSON.  The report is a pure function of the files on disk, so
it can be regenerated bit for bit from a results directory.
"""

import dataclasses
import itertools
import json
import math
import os
import re
import traceback
from dataclasses import dataclass, field
from hashlib import sha256
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .baselines import (
    AdviConfig,
    NewtonBaselineConfig,
    advi_optimize,
    hfsgvi_optimize,
)
from .core import ConfigurationError
from .loop import OptimizerConfig, RunSummary, TraceRecord, optimize
from .zoo import get_model

METHODS = ("trustvi", "advi", "hfsgvi")

# Exact trace schema; column order is part of the interface.
TRACE_COLUMNS = (
    "iter",
    "cum_oracle_calls",
    "elbo_est",
    "delta",
    "m_prime",
    "ell_prime",
    "n_assess",
    "sigma_hat",
    "accepted",
    "grad_calls",
    "hvp_calls",
    "assess_calls",
)

_FLOAT_COLUMNS = {"elbo_est", "delta", "m_prime", "ell_prime", "sigma_hat"}

SUMMARY_KEYS = (
    "model",
    "method",
    "seed",
    "final_elbo",
    "total_oracle_calls",
    "accept_rate",
    "diverged",
)

_CONFIG_CLASSES = {
    "trustvi": OptimizerConfig,
    "advi": AdviConfig,
    "hfsgvi": NewtonBaselineConfig,
}

# Iterations-to-threshold below this flag the pair as too easy to time.
MIN_TIMED_ITERATIONS = 5


def derive_run_seed(master_seed: int, model: str, method: str, rep: int) -> int:
    """Per-run seed: first 8 bytes of sha256("master|model|method|rep").

    sha256 keeps the derivation stable across Python versions and
    processes, unlike the builtin hash.
    """
    key = f"{master_seed}|{model}|{method}|{rep}".encode()
    return int.from_bytes(sha256(key).digest()[:8], "big")


@dataclass(frozen=True)
class ExperimentPlan:
    """Validated description of a models x methods x repetitions sweep."""

    models: Tuple[str, ...]
    methods: Tuple[str, ...]
    repetitions: int = 5
    budget: int = 100_000
    master_seed: int = 0
    out_dir: str = "results"
    configs: Dict[str, dict] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "models", tuple(self.models))
        object.__setattr__(self, "methods", tuple(self.methods))
        if not self.models or not all(
            isinstance(m, str) and m for m in self.models
        ):
            raise ConfigurationError(
                "field 'models': must be a non-empty list of model names"
            )
        if len(set(self.models)) != len(self.models):
            raise ConfigurationError("field 'models': duplicate model name")
        if not self.methods:
            raise ConfigurationError(
                "field 'methods': must be a non-empty list"
            )
        for m in self.methods:
            if m not in METHODS:
                raise ConfigurationError(
                    f"field 'methods': unknown method {m!r}; "
                    f"expected a subset of {list(METHODS)}"
                )
        if len(set(self.methods)) != len(self.methods):
            raise ConfigurationError("field 'methods': duplicate method")
        if not isinstance(self.repetitions, int) or self.repetitions < 1:
            raise ConfigurationError(
                "field 'repetitions': must be a positive integer"
            )
        if self.repetitions % 2 == 0:
            # median run must be well-defined
            raise ConfigurationError("field 'repetitions': must be odd")
        if not isinstance(self.budget, int) or self.budget < 0:
            raise ConfigurationError(
                "field 'budget': must be a nonnegative integer"
            )
        if not isinstance(self.master_seed, int) or self.master_seed < 0:
            raise ConfigurationError(
                "field 'master_seed': must be a nonnegative integer"
            )
        if not isinstance(self.out_dir, str) or not self.out_dir:
            raise ConfigurationError(
                "field 'out_dir': must be a non-empty string"
            )
        for method, overrides in self.configs.items():
            if method not in METHODS:
                raise ConfigurationError(
                    f"field 'configs.{method}': unknown method"
                )
            if not isinstance(overrides, dict):
                raise ConfigurationError(
                    f"field 'configs.{method}': must be an object"
                )
            allowed = {
                f.name for f in dataclasses.fields(_CONFIG_CLASSES[method])
            }
            for key in overrides:
                if key in ("seed", "budget"):
                    raise ConfigurationError(
                        f"field 'configs.{method}.{key}': set per run "
                        "(seed is derived; budget comes from the plan)"
                    )
                if key not in allowed:
                    raise ConfigurationError(
                        f"field 'configs.{method}.{key}': "
                        f"unknown option for {method}"
                    )


_PLAN_FIELDS = {
    "models": list,
    "methods": list,
    "repetitions": int,
    "budget": int,
    "master_seed": int,
    "out_dir": str,
    "configs": dict,
}


def _field_line(text: str, key: str) -> Optional[int]:
    m = re.search(rf'"{re.escape(key)}"\s*:', text)
    if m is None:
        return None
    return text.count("\n", 0, m.start()) + 1


def load_plan(path) -> ExperimentPlan:
    """Parse and validate a plan file, pointing errors at file and field."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"{path}: {exc.strerror}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(
            f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}"
        ) from None
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{path}:1: top level must be a JSON object")

    def fail(key, message):
        line = _field_line(text, key)
        where = f"{path}:{line}" if line else str(path)
        raise ConfigurationError(f"{where}: field {key!r}: {message}")

    for key in raw:
        if key not in _PLAN_FIELDS:
            fail(key, "unknown plan field")
    for key, typ in _PLAN_FIELDS.items():
        if key in raw and not isinstance(raw[key], typ):
            fail(key, f"expected {typ.__name__}")
        if key in raw and typ is int and isinstance(raw[key], bool):
            fail(key, "expected int")
    try:
        plan = ExperimentPlan(
            models=tuple(raw.get("models", ())),
            methods=tuple(raw.get("methods", ())),
            repetitions=raw.get("repetitions", 5),
            budget=raw.get("budget", 100_000),
            master_seed=raw.get("master_seed", 0),
            out_dir=raw.get("out_dir", "results"),
            configs=raw.get("configs", {}),
        )
    except ConfigurationError as exc:
        msg = str(exc)
        m = re.match(r"field '([^'.]+)", msg)
        line = _field_line(text, m.group(1)) if m else None
        where = f"{path}:{line}" if line else str(path)
        raise ConfigurationError(f"{where}: {msg}") from None
    return plan


# ---------------------------------------------------------------------------
# trace and summary persistence


def _format_cell(col: str, value) -> str:
    if col in _FLOAT_COLUMNS:
        # repr round-trips exactly, including inf/-inf/nan
        return repr(float(value))
    if col == "accepted":
        return "true" if value else "false"
    return str(int(value))


def trace_to_csv(trace: Sequence[TraceRecord]) -> str:
    lines = [",".join(TRACE_COLUMNS)]
    for row in trace:
        lines.append(
            ",".join(_format_cell(c, getattr(row, c)) for c in TRACE_COLUMNS)
        )
    return "\n".join(lines) + "\n"


def write_trace_csv(path, trace: Sequence[TraceRecord]) -> None:
    Path(path).write_text(trace_to_csv(trace))


def read_trace_csv(path) -> List[TraceRecord]:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0].split(",") != list(TRACE_COLUMNS):
        raise ConfigurationError(
            f"{path}:1: expected header {','.join(TRACE_COLUMNS)}"
        )
    rows: List[TraceRecord] = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != len(TRACE_COLUMNS):
            raise ConfigurationError(
                f"{path}:{lineno}: expected {len(TRACE_COLUMNS)} fields, "
                f"got {len(parts)}"
            )
        kwargs = {}
        for col, cell in zip(TRACE_COLUMNS, parts):
            try:
                if col in _FLOAT_COLUMNS:
                    kwargs[col] = float(cell)
                elif col == "accepted":
                    if cell not in ("true", "false"):
                        raise ValueError
                    kwargs[col] = cell == "true"
                else:
                    kwargs[col] = int(cell)
            except ValueError:
                raise ConfigurationError(
                    f"{path}:{lineno}: field {col!r}: bad value {cell!r}"
                ) from None
        rows.append(TraceRecord(**kwargs))
    return rows


def summary_to_json(summary: RunSummary) -> str:
    payload = {
        "model": summary.model,
        "method": summary.method,
        "seed": summary.seed,
        "final_elbo": float(summary.final_elbo),
        "total_oracle_calls": int(summary.total_oracle_calls),
        "accept_rate": float(summary.accept_rate),
        "diverged": bool(summary.diverged),
    }
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def write_summary_json(path, summary: RunSummary) -> None:
    Path(path).write_text(summary_to_json(summary))


def read_summary_json(path) -> RunSummary:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(
            f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}"
        ) from None
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{path}: expected a JSON object")
    missing = [k for k in SUMMARY_KEYS if k not in raw]
    extra = sorted(set(raw) - set(SUMMARY_KEYS))
    if missing or extra:
        raise ConfigurationError(
            f"{path}: summary keys mismatch "
            f"(missing {missing}, unexpected {extra})"
        )
    return RunSummary(
        model=str(raw["model"]),
        method=str(raw["method"]),
        seed=int(raw["seed"]),
        final_elbo=float(raw["final_elbo"]),
        total_oracle_calls=int(raw["total_oracle_calls"]),
        accept_rate=float(raw["accept_rate"]),
        diverged=bool(raw["diverged"]),
    )


def run_name(model: str, method: str, rep: int) -> str:
    return f"{model}__{method}__rep{rep}"


def trace_path(out_dir, model: str, method: str, rep: int) -> Path:
    return Path(out_dir) / (run_name(model, method, rep) + ".csv")


def summary_path(out_dir, model: str, method: str, rep: int) -> Path:
    return Path(out_dir) / (run_name(model, method, rep) + ".summary.json")


# ---------------------------------------------------------------------------
# running


def run_single(
    model_name: str,
    method: str,
    seed: int,
    budget: int,
    overrides: Optional[dict] = None,
):
    """Run one (model, method, seed) combination.

    Returns (trace, summary) regardless of method.
    """
    overrides = dict(overrides or {})
    if overrides.get("omega0") is not None:
        overrides["omega0"] = np.asarray(overrides["omega0"], dtype=float)
    model = get_model(model_name)
    if method == "trustvi":
        cfg = OptimizerConfig(seed=seed, budget=budget, **overrides)
        result = optimize(model, cfg)
    elif method == "advi":
        cfg = AdviConfig(seed=seed, budget=budget, **overrides)
        result = advi_optimize(model, cfg)
    elif method == "hfsgvi":
        cfg = NewtonBaselineConfig(seed=seed, budget=budget, **overrides)
        result = hfsgvi_optimize(model, cfg)
    else:
        raise ConfigurationError(
            f"unknown method {method!r}; expected one of {list(METHODS)}"
        )
    return result.trace, result.summary


def resolve_out_dir(plan: ExperimentPlan, override=None) -> Path:
    env = os.environ.get("TRUSTVI_OUT")
    return Path(override or env or plan.out_dir)


def run_experiment(plan: ExperimentPlan, out_dir=None) -> dict:
    """Execute every run in the plan, persist artifacts, build the report.

    A run that raises is recorded in a .error.txt file and skipped; the
    report covers whatever runs completed.
    """
    out = resolve_out_dir(plan, out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for model in plan.models:
        get_model(model)  # fail fast on unknown names
    for model in plan.models:
        for method in plan.methods:
            overrides = plan.configs.get(method, {})
            for rep in range(plan.repetitions):
                seed = derive_run_seed(plan.master_seed, model, method, rep)
                try:
                    trace, summary = run_single(
                        model, method, seed, plan.budget, overrides
                    )
                except Exception:
                    err = out / (run_name(model, method, rep) + ".error.txt")
                    err.write_text(traceback.format_exc())
                    continue
                write_trace_csv(trace_path(out, model, method, rep), trace)
                write_summary_json(
                    summary_path(out, model, method, rep), summary
                )
    report = build_report(out)
    (out / "report.json").write_text(render_report(report))
    return report


# ---------------------------------------------------------------------------
# report assembly (pure function of the artifact directory)

_RUN_FILE = re.compile(r"^(?P<model>.+)__(?P<method>[a-z]+)__rep(?P<rep>\d+)\.csv$")


def smoothed_elbo(rows: Sequence[TraceRecord]) -> List[float]:
    """Centered 3-point moving median of the per-iteration ELBO estimates."""
    vals = [row.elbo_est for row in rows]
    out = []
    for i in range(len(vals)):
        window = vals[max(0, i - 1) : i + 2]
        out.append(float(np.median(window)))
    return out


def calls_to_threshold(
    rows: Sequence[TraceRecord], threshold: float
) -> Optional[Tuple[int, int]]:
    """First (cumulative calls, iteration) after which the smoothed trace
    never drops below the threshold again; None if it never stays above."""
    if not rows:
        return None
    smooth = smoothed_elbo(rows)
    start = 0
    for i in range(len(smooth) - 1, -1, -1):
        if not smooth[i] >= threshold:  # NaN fails the comparison too
            start = i + 1
            break
    if start >= len(rows):
        return None
    return rows[start].cum_oracle_calls, rows[start].iter


def median_rep(summaries: Dict[int, RunSummary]) -> int:
    """Repetition index of the run with the median final ELBO.

    Ties and NaNs resolve deterministically (NaN sorts as -inf, ties by
    repetition index).
    """

    def key(rep):
        v = summaries[rep].final_elbo
        if math.isnan(v):
            v = -math.inf
        return (v, rep)

    order = sorted(summaries, key=key)
    return order[len(order) // 2]


def _compare_pair(name_a, median_a, name_b, median_b):
    summary_a, rows_a = median_a
    summary_b, rows_b = median_b
    # worse method's final value minus one nat, exactly
    threshold = min(summary_a.final_elbo, summary_b.final_elbo) - 1.0
    hit_a = calls_to_threshold(rows_a, threshold)
    hit_b = calls_to_threshold(rows_b, threshold)
    calls_a, iters_a = hit_a if hit_a else (None, None)
    calls_b, iters_b = hit_b if hit_b else (None, None)
    if calls_a is None and calls_b is None:
        speedup = None
    elif calls_a is None:
        speedup = 0.0
    elif calls_b is None:
        speedup = math.inf
    else:
        speedup = calls_b / calls_a if calls_a > 0 else math.inf
    excluded = (iters_a is not None and iters_a < MIN_TIMED_ITERATIONS) or (
        iters_b is not None and iters_b < MIN_TIMED_ITERATIONS
    )
    return {
        "threshold": threshold,
        "calls_to_threshold": {name_a: calls_a, name_b: calls_b},
        "iterations_to_threshold": {name_a: iters_a, name_b: iters_b},
        "speedup_first_over_second": speedup,
        "diverged": {name_a: summary_a.diverged, name_b: summary_b.diverged},
        "excluded_from_runtime_comparison": excluded,
    }


def discover_runs(out_dir):
    """Map model -> method -> rep -> (summary, trace rows) from disk."""
    out = Path(out_dir)
    runs: Dict[str, Dict[str, Dict[int, tuple]]] = {}
    for csv_file in sorted(out.glob("*.csv")):
        m = _RUN_FILE.match(csv_file.name)
        if m is None:
            continue
        summary_file = out / (csv_file.name[: -len(".csv")] + ".summary.json")
        if not summary_file.exists():
            continue
        summary = read_summary_json(summary_file)
        rows = read_trace_csv(csv_file)
        runs.setdefault(m["model"], {}).setdefault(m["method"], {})[
            int(m["rep"])
        ] = (summary, rows)
    return runs


def _method_order(method: str) -> tuple:
    known = method in METHODS
    return (0, METHODS.index(method)) if known else (1, method)


def build_report(out_dir) -> dict:
    """Comparison report derived purely from the persisted artifacts."""
    runs = discover_runs(out_dir)
    report: dict = {"models": {}}
    for model in sorted(runs):
        methods = runs[model]
        entry: dict = {"methods": {}, "comparisons": {}}
        medians = {}
        for method in sorted(methods, key=_method_order):
            by_rep = methods[method]
            rep = median_rep({r: s for r, (s, _) in by_rep.items()})
            summary, rows = by_rep[rep]
            medians[method] = (summary, rows)
            entry["methods"][method] = {
                "repetitions": len(by_rep),
                "median_rep": rep,
                "median_final_elbo": summary.final_elbo,
                "median_total_oracle_calls": summary.total_oracle_calls,
                "diverged": summary.diverged,
            }
        ordered = sorted(medians, key=_method_order)
        for name_a, name_b in itertools.combinations(ordered, 2):
            entry["comparisons"][f"{name_a}_vs_{name_b}"] = _compare_pair(
                name_a, medians[name_a], name_b, medians[name_b]
            )
        report["models"][model] = entry
    return report


def render_report(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2) + "\n"
