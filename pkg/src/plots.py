"""Plot files derived from a run's CSV output: SVG figures plus gnuplot-ready data."""

import math
from pathlib import Path

import matplotlib
from matplotlib.figure import Figure
from matplotlib.patches import Ellipse

from .utils import read_csv, write_csv

REQUIRED_COLUMNS = ("t", "x", "y", "z", "w_eff", "gsd")
COVERAGE_COLUMNS = ("coverage_total", "coverage_ratio")

TOP_VIEW_SCRIPT = """set terminal svg size 900,600
set output 'trajectory_top_gp.svg'
set size ratio -1
set datafile separator ','
set xlabel 'x [m]'
set ylabel 'y [m]'
plot 'shadow_t0.dat' skip 1 using 1:2 with dots lc rgb 'gray' title 'shadow t=0', \\
     'initial_path.dat' skip 1 using 1:2 with lines dt 2 lc rgb 'black' title 'initial path', \\
     'trajectory.dat' skip 1 using 1:2 with lines lw 2 title 'flown path'
"""

ALTITUDE_SCRIPT = """set terminal svg size 900,600
set output 'altitude_profile_gp.svg'
set datafile separator ','
set multiplot layout 2,1
set ylabel 'altitude [m]'
set y2label 'W_eff [m]'
set y2tics
plot 'trajectory.dat' skip 1 using 4:3 with lines lw 2 title 'altitude', \\
     'trajectory.dat' skip 1 using 4:5 axes x1y2 with lines title 'W_eff'
unset y2label
unset y2tics
set xlabel 't [s]'
set ylabel 'GSD [m/px]'
plot 'trajectory.dat' skip 1 using 4:6 with lines lw 2 title 'GSD'
unset multiplot
"""

COVERAGE_SCRIPT = """set terminal svg size 900,400
set output 'coverage_gp.svg'
set datafile separator ','
set xlabel 't [s]'
set ylabel 'covered area [m^2]'
set y2label 'clear footprint fraction'
set y2tics
plot 'coverage.dat' skip 1 using 1:2 with lines lw 2 title 'covered area', \\
     'coverage.dat' skip 1 using 1:3 axes x1y2 with lines title 'clear fraction'
"""


class PlotDataError(ValueError):
    """Raised when a run directory lacks the CSV data a plot needs."""

    pass


def _load_steps(directory: Path) -> list[dict[str, str]]:
    path = directory / "steps.csv"
    if not path.is_file():
        raise PlotDataError(f"no steps.csv in {directory}")
    rows = read_csv(path)
    if not rows:
        raise PlotDataError(f"steps.csv in {directory} has no rows")
    missing = [column for column in REQUIRED_COLUMNS if column not in rows[0]]
    if missing:
        raise PlotDataError(f"steps.csv is missing columns: {', '.join(missing)}")
    return rows


def _column(rows: list[dict[str, str]], name: str) -> list[float]:
    return [float(row[name]) if row[name] else math.nan for row in rows]


def _optional(path: Path) -> list[dict[str, str]]:
    return read_csv(path) if path.is_file() else []


def _save(figure: Figure, path: Path) -> Path:
    # Fixed hash salt and no date keep re-emitted SVGs byte-identical.
    with matplotlib.rc_context({"svg.hashsalt": "river-uav", "svg.fonttype": "none"}):
        figure.savefig(path, format="svg", metadata={"Date": None})
    return path


def _write_script(path: Path, script: str) -> Path:
    path.write_text(script, encoding="utf-8")
    return path


def _top_view(
    xs: list[float],
    ys: list[float],
    shadow: list[dict[str, str]],
    obstacles: list[dict[str, str]],
    initial: list[dict[str, str]],
) -> Figure:
    figure = Figure(figsize=(9, 6))
    ax = figure.add_subplot()
    if shadow:
        ax.scatter(
            [float(row["x"]) for row in shadow],
            [float(row["y"]) for row in shadow],
            s=0.5,
            color="0.6",
            label="shadow t=0",
        )
    for obs in obstacles:
        ax.add_patch(
            Ellipse(
                xy=(float(obs["x"]), float(obs["y"])),
                width=2 * float(obs["a"]) * float(obs["inflation"]),
                height=2 * float(obs["b"]) * float(obs["inflation"]),
                angle=math.degrees(float(obs["yaw"])),
                fill=False,
                lw=1,
                color="tab:red",
            )
        )
    if initial:
        ax.plot(
            _column(initial, "x"),
            _column(initial, "y"),
            lw=1,
            ls="--",
            color="black",
            label="initial path",
        )
    ax.plot(xs, ys, lw=1.5, color="tab:blue", label="flown path")
    ax.set_aspect("equal")
    ax.grid(True)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.legend(loc="best")
    return figure


def _altitude_profile(
    ts: list[float], zs: list[float], widths: list[float], gsds: list[float]
) -> Figure:
    """Altitude with the observable width on a twin axis, GSD in a panel below."""
    figure = Figure(figsize=(9, 6))
    top, bottom = figure.subplots(2, 1, sharex=True)
    top.plot(ts, zs, lw=1.5, color="tab:blue", label="altitude")
    top.set_ylabel("altitude [m]")
    top.grid(True)
    width_ax = top.twinx()
    width_ax.plot(ts, widths, lw=1, color="tab:orange", label="W_eff")
    width_ax.set_ylabel("W_eff [m]")
    bottom.plot(ts, gsds, lw=1.5, color="tab:green", label="GSD")
    bottom.set_xlabel("t [s]")
    bottom.set_ylabel("GSD [m/px]")
    bottom.grid(True)
    return figure


def _coverage_view(ts: list[float], totals: list[float], ratios: list[float]) -> Figure:
    figure = Figure(figsize=(9, 4))
    ax = figure.add_subplot()
    ax.plot(ts, totals, lw=1.5, color="tab:blue", label="covered area")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("covered area [m²]")
    ax.grid(True)
    ratio_ax = ax.twinx()
    ratio_ax.plot(ts, ratios, lw=1, color="tab:purple", label="clear fraction")
    ratio_ax.set_ylabel("clear footprint fraction")
    ratio_ax.set_ylim(0.0, 1.05)
    return figure


def emit_plots(directory: Path) -> list[Path]:
    """
    Write plot files for one run directory.

    Produces a top-view trajectory SVG (flown path over the t=0 shadow, the
    fitted obstacles and the dashed initial path), an altitude profile SVG with
    W_eff and a GSD panel, a coverage SVG when the step log has coverage
    columns, the gnuplot data files behind them and gnuplot scripts that redraw
    the same views.

    Args:
        directory: Run directory containing steps.csv (and optionally
            shadow_t0.csv, obstacles_t0.csv and initial_path.csv)

    Returns:
        The written files

    Raises:
        PlotDataError: If steps.csv is absent, empty or lacks required columns
    """
    directory = Path(directory)
    rows = _load_steps(directory)
    xs, ys, zs = _column(rows, "x"), _column(rows, "y"), _column(rows, "z")
    ts, widths, gsds = _column(rows, "t"), _column(rows, "w_eff"), _column(rows, "gsd")
    with_coverage = all(column in rows[0] for column in COVERAGE_COLUMNS)

    shadow = _optional(directory / "shadow_t0.csv")
    obstacles = _optional(directory / "obstacles_t0.csv")
    initial = _optional(directory / "initial_path.csv")

    written = [
        write_csv(
            directory / "trajectory.dat",
            ("x", "y", "z", "t", "w_eff", "gsd"),
            zip(xs, ys, zs, ts, widths, gsds, strict=True),
        ),
        write_csv(
            directory / "shadow_t0.dat",
            ("x", "y"),
            ((float(row["x"]), float(row["y"])) for row in shadow),
        ),
        write_csv(
            directory / "initial_path.dat",
            ("x", "y", "z"),
            zip(_column(initial, "x"), _column(initial, "y"), _column(initial, "z"), strict=True),
        ),
    ]
    if with_coverage:
        totals, ratios = _column(rows, "coverage_total"), _column(rows, "coverage_ratio")
        written.append(
            write_csv(
                directory / "coverage.dat",
                ("t", "coverage_total", "coverage_ratio"),
                zip(ts, totals, ratios, strict=True),
            )
        )

    written.append(_write_script(directory / "trajectory_top.gp", TOP_VIEW_SCRIPT))
    written.append(_write_script(directory / "altitude.gp", ALTITUDE_SCRIPT))
    if with_coverage:
        written.append(_write_script(directory / "coverage.gp", COVERAGE_SCRIPT))

    top = _top_view(xs, ys, shadow, obstacles, initial)
    written.append(_save(top, directory / "trajectory_top.svg"))
    profile = _altitude_profile(ts, zs, widths, gsds)
    written.append(_save(profile, directory / "altitude_profile.svg"))
    if with_coverage:
        written.append(_save(_coverage_view(ts, totals, ratios), directory / "coverage.svg"))
    return written
