"""Batch renderer for optimizer trace CSVs.

Consumes the benchmark harness artifacts (``<model>__<method>__rep<k>.csv``)
purely through their documented CSV schema and draws one log-log
convergence figure per model: cumulative oracle calls against the gap to
the best final ELBO, one series per run, one legend entry per method.
"""

from .render import (
    PlotSpec,
    RenderedFigure,
    SchemaError,
    TRACE_COLUMNS,
    gap_to_best_final,
    group_traces,
    read_trace,
    render,
)

__version__ = "0.1.0"

__all__ = [
    "PlotSpec",
    "RenderedFigure",
    "SchemaError",
    "TRACE_COLUMNS",
    "gap_to_best_final",
    "group_traces",
    "read_trace",
    "render",
]
