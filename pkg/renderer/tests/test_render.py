"""Renderer tests: schema validation, grouping, drawing, determinism.

Fixtures are handwritten CSV text in the documented trace schema; the
renderer is exercised exactly the way the harness artifacts would drive
it, without importing the optimizer package.
"""

import time

import numpy as np
import pytest

traceplot = pytest.importorskip("traceplot")

import matplotlib.pyplot as plt  # noqa: E402  (after the importorskip)

from traceplot import (  # noqa: E402
    PlotSpec,
    SchemaError,
    TRACE_COLUMNS,
    gap_to_best_final,
    group_traces,
    read_trace,
    render,
)
from traceplot.cli import main  # noqa: E402

HEADER = ",".join(TRACE_COLUMNS)


def synth_trace(path, n=30, seed=0, start=-50.0, plateau=-2.0):
    """A plausible improving run: calls accumulate, values rise."""
    rng = np.random.default_rng(seed)
    calls = np.cumsum(rng.integers(3, 9, size=n))
    progress = np.linspace(0.0, 3.0, n)
    elbo = plateau + (start - plateau) * np.exp(-progress)
    elbo = elbo - rng.uniform(0.0, 0.5, size=n)
    lines = [HEADER]
    for i in range(n):
        lines.append(
            f"{i},{calls[i]},{float(elbo[i])!r},"
            "0.5,0.1,0.08,128,0.01,True,1,2,1"
        )
    path.write_text("\n".join(lines) + "\n")
    return calls, elbo


def fifteen_runs(tmp_path):
    tdir = tmp_path / "traces"
    tdir.mkdir()
    seed = 0
    for method in ("trustvi", "advi", "hfsgvi"):
        for rep in range(5):
            synth_trace(tdir / f"demo__{method}__rep{rep}.csv", seed=seed)
            seed += 1
    return tdir


# ---------------------------------------------------------------------------
# parsing and grouping


def test_read_trace_parses_provenance_and_columns(tmp_path):
    path = tmp_path / "gaussian8__trustvi__rep3.csv"
    calls, elbo = synth_trace(path, n=7, seed=1)
    run = read_trace(path)
    assert (run.model, run.method, run.rep) == ("gaussian8", "trustvi", 3)
    np.testing.assert_array_equal(run.calls, calls.astype(float))
    np.testing.assert_allclose(run.elbo, elbo, rtol=0, atol=0)


def test_read_trace_accepts_non_finite_values(tmp_path):
    path = tmp_path / "m__advi__rep0.csv"
    rows = [HEADER, "0,1,inf,0.5,0.1,0.1,0,0.0,False,1,0,0",
            "1,2,nan,0.5,0.1,0.1,0,0.0,False,1,0,0",
            "2,3,-inf,0.5,0.1,0.1,0,0.0,False,1,0,0"]
    path.write_text("\n".join(rows) + "\n")
    run = read_trace(path)
    assert np.isinf(run.elbo[0]) and np.isnan(run.elbo[1])
    assert run.elbo[2] == -np.inf


def test_unparseable_file_name_is_a_schema_error(tmp_path):
    path = tmp_path / "notes.csv"
    path.write_text(HEADER + "\n")
    with pytest.raises(SchemaError, match="file name"):
        read_trace(path)


def test_wrong_header_is_a_schema_error(tmp_path):
    path = tmp_path / "m__advi__rep0.csv"
    path.write_text("iter,calls,elbo\n0,1,2.0\n")
    with pytest.raises(SchemaError, match="header"):
        read_trace(path)


def test_wrong_field_count_is_a_schema_error_with_line_number(tmp_path):
    path = tmp_path / "m__advi__rep0.csv"
    path.write_text(HEADER + "\n0,1,2.0\n")
    with pytest.raises(SchemaError, match=r"rep0\.csv:2: expected 12"):
        read_trace(path)


def test_unparseable_number_is_a_schema_error(tmp_path):
    path = tmp_path / "m__advi__rep0.csv"
    bad = "0,one,2.0,0.5,0.1,0.1,0,0.0,False,1,0,0"
    path.write_text(HEADER + "\n" + bad + "\n")
    with pytest.raises(SchemaError, match=r"rep0\.csv:2"):
        read_trace(path)


def test_empty_trace_skipped_with_warning(tmp_path):
    good = tmp_path / "m__advi__rep0.csv"
    synth_trace(good, n=5)
    empty = tmp_path / "m__advi__rep1.csv"
    empty.write_text(HEADER + "\n")
    with pytest.warns(UserWarning, match="empty trace m__advi__rep1"):
        groups = group_traces([good, empty])
    assert [r.rep for r in groups["m"]] == [0]


def test_grouping_is_by_model_across_methods(tmp_path):
    for name in ("a__advi__rep0.csv", "a__trustvi__rep0.csv",
                 "b__advi__rep0.csv"):
        synth_trace(tmp_path / name, n=4, seed=len(name))
    groups = group_traces(sorted(tmp_path.glob("*.csv")))
    assert sorted(groups) == ["a", "b"]
    assert len(groups["a"]) == 2 and len(groups["b"]) == 1


# ---------------------------------------------------------------------------
# the gap transform


def test_gap_is_positive_and_masks_what_log_axes_reject():
    elbo = np.array([-10.0, -1.0, 0.5, np.nan, -np.inf])
    gap = gap_to_best_final(elbo, best_final=-0.5)
    np.testing.assert_allclose(gap[:2], [10.5, 1.5])
    # -0.5 + 1 - 0.5 = 0 is not plottable on a log axis
    assert np.isnan(gap[2]) and np.isnan(gap[3])
    # a -inf value gives a +inf gap, non-finite and therefore masked
    assert np.isnan(gap[4])


def test_gap_uses_one_nat_offset():
    gap = gap_to_best_final(np.array([-3.0]), best_final=-3.0)
    assert gap[0] == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# rendering


def test_fifteen_runs_one_figure_three_legend_entries(tmp_path, criterion):
    start = time.perf_counter()
    tdir = fifteen_runs(tmp_path)
    paths = tuple(sorted(tdir.glob("*.csv")))
    before = {p: p.read_bytes() for p in paths}

    figures = render(PlotSpec(traces=paths, out_dir=tmp_path / "out1"))
    assert len(figures) == 1
    figure = figures[0]
    structure_ok = (
        figure.model == "demo"
        and figure.path.name == "demo.png"
        and figure.n_series == 15
        and figure.legend == ("trustvi", "advi", "hfsgvi")
    )

    render(PlotSpec(traces=paths, out_dir=tmp_path / "out2"))
    first = plt.imread(tmp_path / "out1" / "demo.png")
    second = plt.imread(tmp_path / "out2" / "demo.png")
    pixels_ok = first.shape == second.shape and np.array_equal(first, second)

    inputs_ok = all(p.read_bytes() == before[p] for p in paths)
    elapsed = time.perf_counter() - start
    ok = structure_ok and pixels_ok and inputs_ok
    detail = (
        f"15 traces -> 1 log-log figure, {figure.n_series} series, legend "
        f"{list(figure.legend)}; re-render pixel-identical={pixels_ok}, "
        f"inputs untouched={inputs_ok}, {elapsed:.1f}s"
    )
    assert criterion(10, ok, detail), detail


def test_svg_output_is_byte_stable(tmp_path):
    tdir = tmp_path / "traces"
    tdir.mkdir()
    synth_trace(tdir / "m__trustvi__rep0.csv", seed=4)
    synth_trace(tdir / "m__advi__rep0.csv", seed=5)
    paths = tuple(sorted(tdir.glob("*.csv")))
    render(PlotSpec(traces=paths, out_dir=tmp_path / "a", fmt="svg"))
    render(PlotSpec(traces=paths, out_dir=tmp_path / "b", fmt="svg"))
    a = (tmp_path / "a" / "m.svg").read_bytes()
    b = (tmp_path / "b" / "m.svg").read_bytes()
    assert a == b
    assert b"dc:date" not in a.lower()


def test_one_figure_per_model(tmp_path):
    for name in ("a__advi__rep0.csv", "b__advi__rep0.csv",
                 "c__trustvi__rep1.csv"):
        synth_trace(tmp_path / name, n=6, seed=len(name))
    figures = render(
        PlotSpec(traces=tuple(sorted(tmp_path.glob("*.csv"))),
                 out_dir=tmp_path / "out")
    )
    assert [f.model for f in figures] == ["a", "b", "c"]
    assert all(f.path.exists() for f in figures)
    assert all(f.n_series == 1 and len(f.legend) == 1 for f in figures)


def test_single_run_single_series(tmp_path):
    synth_trace(tmp_path / "solo__hfsgvi__rep0.csv", n=9)
    figures = render(
        PlotSpec(traces=(tmp_path / "solo__hfsgvi__rep0.csv",),
                 out_dir=tmp_path / "out")
    )
    assert figures[0].n_series == 1
    assert figures[0].legend == ("hfsgvi",)


def test_style_override_is_accepted(tmp_path):
    synth_trace(tmp_path / "m__advi__rep0.csv", n=5)
    figures = render(
        PlotSpec(
            traces=(tmp_path / "m__advi__rep0.csv",),
            out_dir=tmp_path / "out",
            styles={"advi": "#000000"},
        )
    )
    assert figures[0].legend == ("advi",)


def test_all_empty_traces_is_an_error(tmp_path):
    empty = tmp_path / "m__advi__rep0.csv"
    empty.write_text(HEADER + "\n")
    with pytest.warns(UserWarning):
        with pytest.raises(SchemaError, match="no non-empty traces"):
            render(PlotSpec(traces=(empty,), out_dir=tmp_path / "out"))


def test_diverged_runs_fall_back_to_best_seen_value(tmp_path):
    # every run ends non-finite: the gap reference falls back to the best
    # finite value anywhere in the traces
    path = tmp_path / "m__hfsgvi__rep0.csv"
    rows = [HEADER,
            "0,3,-4.0,0.5,0.1,0.1,0,0.0,True,1,2,0",
            "1,6,-2.0,0.5,0.1,0.1,0,0.0,True,1,2,0",
            "2,9,nan,0.5,0.1,0.1,0,0.0,False,1,2,0"]
    path.write_text("\n".join(rows) + "\n")
    figures = render(PlotSpec(traces=(path,), out_dir=tmp_path / "out"))
    assert figures[0].n_series == 1


def test_bad_format_rejected(tmp_path):
    synth_trace(tmp_path / "m__advi__rep0.csv", n=3)
    with pytest.raises(SchemaError, match="png or svg"):
        PlotSpec(traces=(tmp_path / "m__advi__rep0.csv",),
                 out_dir=tmp_path, fmt="pdf")


# ---------------------------------------------------------------------------
# command line


def test_cli_renders_glob(tmp_path, capsys):
    tdir = fifteen_runs(tmp_path)
    out = tmp_path / "figs"
    rc = main(["--traces", str(tdir / "*.csv"), "--out", str(out)])
    assert rc == 0
    assert (out / "demo.png").exists()
    stdout = capsys.readouterr().out
    assert "15 series" in stdout
    assert "trustvi, advi, hfsgvi" in stdout


def test_cli_empty_glob_exits_nonzero(tmp_path, capsys):
    rc = main(["--traces", str(tmp_path / "*.csv"), "--out", str(tmp_path)])
    assert rc == 2
    assert "error: no trace files" in capsys.readouterr().err


def test_cli_schema_mismatch_exits_nonzero(tmp_path, capsys):
    bad = tmp_path / "m__advi__rep0.csv"
    bad.write_text("wrong,header\n1,2\n")
    rc = main(["--traces", str(bad), "--out", str(tmp_path / "out")])
    assert rc == 2
    assert "header" in capsys.readouterr().err


def test_cli_svg_format(tmp_path):
    synth_trace(tmp_path / "m__trustvi__rep0.csv", n=5)
    out = tmp_path / "figs"
    rc = main(["--traces", str(tmp_path / "*.csv"), "--out", str(out),
               "--format", "svg"])
    assert rc == 0
    assert (out / "m.svg").exists()
