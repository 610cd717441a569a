"""Reading, grouping, and drawing of optimizer trace CSVs."""

import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")  # batch tool; must be set before pyplot loads

import matplotlib.pyplot as plt
import numpy as np

Array = np.ndarray

# The consumed interface: exact header of a harness trace CSV.  Only the
# call counter and the value estimate are plotted; the full header is
# still checked so that schema drift upstream fails loudly here.
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

_RUN_FILE = re.compile(
    r"^(?P<model>.+)__(?P<method>[a-z]+)__rep(?P<rep>\d+)\.csv$"
)

# stable method ordering and palette: known methods first, then any
# others alphabetically, so identical inputs always style identically
_METHOD_ORDER = ("trustvi", "advi", "hfsgvi")
_PALETTE = ("#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#8c564b", "#e377c2")


class SchemaError(ValueError):
    """A trace file does not match the documented CSV contract."""


@dataclass(frozen=True)
class Run:
    """One parsed trace: the two plotted columns plus provenance."""

    path: Path
    model: str
    method: str
    rep: int
    calls: Array
    elbo: Array


@dataclass(frozen=True)
class PlotSpec:
    """What to render: trace files, destination, format, optional styles.

    styles maps method name to a matplotlib color and overrides the
    built-in palette for that method.
    """

    traces: Tuple[Path, ...]
    out_dir: Path
    fmt: str = "png"
    styles: Optional[Dict[str, str]] = None

    def __post_init__(self):
        object.__setattr__(self, "traces", tuple(Path(p) for p in self.traces))
        if self.fmt not in ("png", "svg"):
            raise SchemaError(f"format must be png or svg, not {self.fmt!r}")
        if not self.traces:
            raise SchemaError("no trace files to render")


@dataclass(frozen=True)
class RenderedFigure:
    """What one written figure contains, for callers and tests."""

    model: str
    path: Path
    n_series: int
    legend: Tuple[str, ...]


def read_trace(path) -> Run:
    """Parse one trace CSV, validating the full schema."""
    path = Path(path)
    name = path.name
    m = _RUN_FILE.match(name)
    if m is None:
        raise SchemaError(
            f"{name}: file name must look like <model>__<method>__rep<k>.csv"
        )
    try:
        text = path.read_text()
    except OSError as exc:
        raise SchemaError(f"{name}: {exc}") from exc
    lines = text.splitlines()
    if not lines or tuple(lines[0].split(",")) != TRACE_COLUMNS:
        raise SchemaError(f"{name}: header does not match the trace schema")
    calls: List[float] = []
    elbo: List[float] = []
    for idx, line in enumerate(lines[1:], start=2):
        fields = line.split(",")
        if len(fields) != len(TRACE_COLUMNS):
            raise SchemaError(
                f"{name}:{idx}: expected {len(TRACE_COLUMNS)} fields, "
                f"got {len(fields)}"
            )
        try:
            calls.append(int(fields[1]))
            elbo.append(float(fields[2]))
        except ValueError as exc:
            raise SchemaError(f"{name}:{idx}: {exc}") from exc
    return Run(
        path=path,
        model=m["model"],
        method=m["method"],
        rep=int(m["rep"]),
        calls=np.asarray(calls, dtype=float),
        elbo=np.asarray(elbo, dtype=float),
    )


def group_traces(paths: Sequence) -> Dict[str, List[Run]]:
    """Parse and group traces by model, skipping empty ones with a warning."""
    groups: Dict[str, List[Run]] = {}
    for path in sorted(Path(p) for p in paths):
        run = read_trace(path)
        if run.calls.size == 0:
            warnings.warn(f"skipping empty trace {path.name}")
            continue
        groups.setdefault(run.model, []).append(run)
    return groups


def gap_to_best_final(elbo: Array, best_final: float) -> Array:
    """Positive gap best_final + 1 - elbo, with values that cannot sit on
    a log axis (nonpositive or non-finite) masked to NaN."""
    gap = best_final + 1.0 - np.asarray(elbo, dtype=float)
    with np.errstate(invalid="ignore"):
        bad = ~np.isfinite(gap) | (gap <= 0)
    return np.where(bad, np.nan, gap)


def _order_key(method: str) -> tuple:
    known = method in _METHOD_ORDER
    return (0, _METHOD_ORDER.index(method)) if known else (1, method)


def _method_colors(methods: Sequence[str], overrides) -> Dict[str, str]:
    distinct = sorted(set(methods), key=_order_key)
    colors = {m: _PALETTE[i % len(_PALETTE)] for i, m in enumerate(distinct)}
    if overrides:
        colors.update({m: c for m, c in overrides.items() if m in colors})
    return colors


def _stable_metadata(fmt: str) -> dict:
    if fmt == "svg":
        return {"Date": None}  # drop the embedded timestamp
    return {"Software": "traceplot"}


def _best_final(model: str, runs: Sequence[Run]) -> Optional[float]:
    finals = [float(r.elbo[-1]) for r in runs if np.isfinite(r.elbo[-1])]
    if finals:
        return max(finals)
    # every run ended non-finite; fall back to the best value seen anywhere
    points = np.concatenate([r.elbo for r in runs])
    points = points[np.isfinite(points)]
    if points.size == 0:
        warnings.warn(f"skipping model {model}: no finite values to plot")
        return None
    return float(points.max())


def render(spec: PlotSpec) -> List[RenderedFigure]:
    """Write one figure per model and describe what was drawn.

    Inputs are only ever read; rendering twice from the same inputs
    produces pixel-identical images.
    """
    plt.rcParams["svg.hashsalt"] = "traceplot"  # content-stable svg ids
    groups = group_traces(spec.traces)
    out_dir = Path(spec.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: List[RenderedFigure] = []
    for model in sorted(groups):
        runs = sorted(groups[model], key=lambda r: (_order_key(r.method), r.rep))
        best_final = _best_final(model, runs)
        if best_final is None:
            continue
        colors = _method_colors([r.method for r in runs], spec.styles)
        fig, ax = plt.subplots(figsize=(6.4, 4.8), dpi=100)
        labeled = set()
        for run in runs:
            label = run.method if run.method not in labeled else None
            labeled.add(run.method)
            ax.plot(
                run.calls,
                gap_to_best_final(run.elbo, best_final),
                color=colors[run.method],
                linewidth=1.0,
                alpha=0.8,
                label=label,
            )
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("cumulative oracle calls")
        ax.set_ylabel("gap to best final value + 1 (nats)")
        ax.set_title(model)
        legend = ax.legend()
        labels = tuple(t.get_text() for t in legend.get_texts())
        n_series = len(ax.get_lines())
        path = out_dir / f"{model}.{spec.fmt}"
        fig.savefig(path, format=spec.fmt, metadata=_stable_metadata(spec.fmt))
        plt.close(fig)
        written.append(
            RenderedFigure(
                model=model, path=path, n_series=n_series, legend=labels
            )
        )
    if not written:
        raise SchemaError("no non-empty traces to render")
    return written
