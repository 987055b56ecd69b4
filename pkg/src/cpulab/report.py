"""Report emission: CSV tables, JSON records, and SVG figures.

Each figure gets a sibling CSV with exactly the plotted points, and the
SVG itself carries the same data in an XML comment, so numbers can be
pulled back out of a report without any plotting toolchain. Emission is
deterministic for identical artifacts: figure element ids are salted with
a fixed string and no generation timestamps are written.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .analysis import ComparisonReport, KneeFit, LinearFit, detect_knee, fit_linear
from .clamp_model import ClampSpec, Resolution
from .errors import InputError
from .orchestrator import RunArtifacts
from .scoring import AccuracyCurve

matplotlib.rcParams["svg.hashsalt"] = "cpulab"

FIGURES = (
    "auc_vs_tokens",
    "auc_vs_pixels",
    "tps_vs_pixels",
    "accuracy_vs_pixels",
)

TABLE_NOTE = (
    "headline columns follow the max-power / mean-duration convention; "
    "wh_per_run is the sum of per-prompt values and wh_per_prompt their max; "
    "*_integrated columns are trapezoidal integrals, *_bound columns are "
    "max-power x duration"
)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _embed_data_comment(svg_path: Path, header: list[str], rows: list[list]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    payload = buf.getvalue().replace("--", "- -")
    text = svg_path.read_text()
    marker = "\n<!-- figure-data\n" + payload + "-->\n"
    idx = text.find("?>")
    if idx >= 0:
        text = text[: idx + 2] + marker + text[idx + 2 :]
    else:
        text = marker + text
    svg_path.write_text(text)


def _new_axes(title: str, xlabel: str, ylabel: str):
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.3)
    return fig, ax


def _save_figure(fig, path: Path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _series_rows(series: dict[str, list[tuple[float, float]]]) -> list[list]:
    rows = []
    for label, pts in series.items():
        for x, y in pts:
            rows.append([label, x, y])
    return rows


def _plot_series(
    out_dir: Path,
    name: str,
    title: str,
    xlabel: str,
    ylabel: str,
    series: dict[str, list[tuple[float, float]]],
    overlays: dict[str, list[tuple[float, float]]] | None = None,
) -> None:
    fig, ax = _new_axes(title, xlabel, ylabel)
    any_data = False
    for label, pts in sorted(series.items()):
        if not pts:
            continue
        any_data = True
        xs, ys = zip(*sorted(pts))
        ax.plot(xs, ys, marker="o", markersize=3.5, linewidth=1.2, label=label)
    for label, pts in sorted((overlays or {}).items()):
        if not pts:
            continue
        xs, ys = zip(*sorted(pts))
        ax.plot(xs, ys, linestyle="--", linewidth=1.0, label=label)
    if any_data:
        ax.legend(fontsize=8)
    else:
        ax.text(0.5, 0.5, "no data", ha="center", va="center", transform=ax.transAxes)
    rows = _series_rows(series)
    header = ["series", "x", "y"]
    _write_csv(out_dir / f"{name}.csv", header, rows)
    svg_path = out_dir / f"{name}.svg"
    _save_figure(fig, svg_path)
    _embed_data_comment(svg_path, header, rows)


def _fit_overlay(points: list[tuple[float, float]], fit: LinearFit, label: str):
    xs = sorted(x for x, _ in points)
    return {f"{label} fit": [(x, fit.predict(x)) for x in (xs[0], xs[-1])]}


def _knee_overlay(points: list[tuple[float, float]], knee: KneeFit, label: str):
    xs = sorted(x for x, _ in points)
    pts = []
    for x in xs:
        if x >= knee.knee_pixels:
            pts.append((x, knee.c_flat))
        else:
            pts.append((x, knee.below_intercept + knee.below_slope * x))
    return {f"{label} knee fit": pts}


def run_fits(run: RunArtifacts) -> dict:
    """Scaling-law fits appropriate for the run kind, as JSON-ready records."""
    out: dict = {}
    law1 = run.law1_points()
    if run.metadata.get("sweep_kind") == "prompt-ladder" and len(law1) >= 2:
        distinct = len({x for x, _ in law1})
        if distinct >= 2:
            fit = fit_linear(law1)
            out["token_scaling"] = {
                "model": run.label,
                "device": run.metadata.get("device", ""),
                "a": fit.a,
                "b": fit.b,
                "r2": fit.r2,
                "n": fit.n,
            }
    law2 = run.law2_points()
    if len(law2) >= 4:
        hint = None
        clamp = run.metadata.get("clamp")
        if clamp:
            hint = ClampSpec.parse(clamp)
        knee = detect_knee(law2, hint=hint)
        out["resolution_knee"] = {
            "model": run.label,
            "device": run.metadata.get("device", ""),
            "knee_pixels": knee.knee_pixels,
            "c_flat": knee.c_flat,
            "below_intercept": knee.below_intercept,
            "below_slope": knee.below_slope,
            "confident": knee.confident,
            "hint_offset_steps": knee.hint_offset_steps,
        }
    return out


def summarize_run(run: RunArtifacts) -> dict:
    """One table row per run: power, duration, energy, AUC and throughput."""
    records = run.ok_records()
    if not records:
        return {
            "model": run.label,
            "device": run.metadata.get("device", ""),
            "backend_mode": run.metadata.get("backend_mode", ""),
            "n_steps": len(run.records),
            "n_flagged": len(run.records),
        }
    durations = [r.duration_s for r in records if r.duration_s]
    row = {
        "model": run.label,
        "device": run.metadata.get("device", ""),
        "backend_mode": run.metadata.get("backend_mode", ""),
        "n_steps": len(run.records),
        "n_flagged": sum(1 for r in run.records if r.flagged),
        "mean_prompt_duration_s": sum(durations) / len(durations) if durations else None,
        "max_prompt_duration_s": max(durations) if durations else None,
        "mean_cpu_auc": _mean([r.cpu_auc for r in records]),
        "mean_ram_auc": _mean([r.ram_auc for r in records]),
        "mean_throughput_tps": _mean([r.throughput_tps for r in records]),
    }
    bounds = [r.wh_max_bound for r in records if r.wh_max_bound is not None]
    integrated = [r.wh for r in records if r.wh is not None]
    if bounds:
        row["max_power_w"] = max(r.max_power_w for r in records if r.max_power_w is not None)
        row["wh_per_prompt_bound"] = max(bounds)
        row["wh_per_run_bound"] = sum(bounds)
    if integrated:
        row["wh_per_prompt_integrated"] = max(integrated)
        row["wh_per_run_integrated"] = sum(integrated)
    return row


def _mean(vals) -> float | None:
    vals = [v for v in vals if v is not None]
    return sum(vals) / len(vals) if vals else None


SUMMARY_COLUMNS = [
    "model",
    "device",
    "backend_mode",
    "n_steps",
    "n_flagged",
    "max_power_w",
    "mean_prompt_duration_s",
    "max_prompt_duration_s",
    "wh_per_prompt_bound",
    "wh_per_run_bound",
    "wh_per_prompt_integrated",
    "wh_per_run_integrated",
    "mean_cpu_auc",
    "mean_ram_auc",
    "mean_throughput_tps",
]

COMPARISON_COLUMNS = [
    "base",
    "comp",
    "n_inputs",
    "cpu_auc_reduction_pct",
    "ram_auc_reduction_pct",
    "wh_reduction_pct",
    "speedup",
    "wins",
    "accuracy_delta_pp",
]


def emit_summary(
    runs: Sequence[RunArtifacts],
    comparisons: Sequence[tuple[str, str, ComparisonReport]] = (),
    out_dir: str | Path = "report",
    accuracy: dict[str, AccuracyCurve] | None = None,
    provenance: bool = False,
) -> dict:
    """Write the report bundle for one or more runs.

    Produces ``summary.csv``/``summary.json``, a comparison table when
    comparisons are given, four figures (AUC vs tokens, AUC vs pixels,
    throughput vs pixels, accuracy vs pixels) each with a sibling data CSV,
    and optionally ``provenance.json`` mapping every table cell back to the
    run and record indices it came from.

    Returns the summary payload that was written to ``summary.json``.

    Raises:
        InputError: no runs given.
    """
    runs = list(runs)
    if not runs:
        raise InputError("emit_summary needs at least one run")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    accuracy = accuracy or {}

    rows = []
    fits: dict[str, dict] = {}
    for run in runs:
        row = summarize_run(run)
        curve = accuracy.get(run.run_id) or accuracy.get(run.label)
        if curve is not None:
            row["mean_accuracy"] = curve.mean
            row["accuracy_variant"] = curve.variant + (
                " (fallback)" if curve.fallback else ""
            )
        rows.append(row)
        fits[run.label] = run_fits(run)

    columns = list(SUMMARY_COLUMNS)
    if any("mean_accuracy" in r for r in rows):
        columns += ["mean_accuracy", "accuracy_variant"]
    _write_csv(
        out_dir / "summary.csv",
        columns,
        [[r.get(c) for c in columns] for r in rows],
    )
    with (out_dir / "summary.csv").open("a") as fh:
        fh.write(f"# note: {TABLE_NOTE}\n")

    comp_rows = []
    for base_label, comp_label, rep in comparisons:
        comp_rows.append(
            [
                base_label,
                comp_label,
                rep.n_inputs,
                rep.mean_reduction.get("cpu_auc"),
                rep.mean_reduction.get("ram_auc"),
                rep.mean_reduction.get("wh"),
                rep.speedup,
                rep.wins,
                rep.accuracy_delta_pp,
            ]
        )
    if comp_rows:
        _write_csv(out_dir / "comparisons.csv", COMPARISON_COLUMNS, comp_rows)

    payload = {
        "runs": rows,
        "fits": fits,
        "comparisons": [
            {"base": b, "comp": c, **asdict(rep)} for b, c, rep in comparisons
        ],
        "note": TABLE_NOTE,
    }
    (out_dir / "summary.json").write_text(json.dumps(payload, indent=2, default=str))

    # Figures: one series per run; fit overlays where a fit exists.
    tokens_series = {run.label: run.law1_points() for run in runs}
    tokens_overlays: dict[str, list[tuple[float, float]]] = {}
    pixels_series = {run.label: run.law2_points() for run in runs}
    pixels_overlays: dict[str, list[tuple[float, float]]] = {}
    tps_series = {run.label: run.tps_points() for run in runs}
    acc_series: dict[str, list[tuple[float, float]]] = {}
    for run in runs:
        fit_info = fits.get(run.label, {})
        if "token_scaling" in fit_info and run.law1_points():
            fit = LinearFit(
                a=fit_info["token_scaling"]["a"],
                b=fit_info["token_scaling"]["b"],
                r2=fit_info["token_scaling"]["r2"],
                n=fit_info["token_scaling"]["n"],
            )
            tokens_overlays.update(_fit_overlay(run.law1_points(), fit, run.label))
        if "resolution_knee" in fit_info and run.law2_points():
            info = fit_info["resolution_knee"]
            knee = KneeFit(
                knee_pixels=info["knee_pixels"],
                c_flat=info["c_flat"],
                below_intercept=info["below_intercept"],
                below_slope=info["below_slope"],
                sse=0.0,
                n=0,
                n_flat=0,
                confident=info["confident"],
            )
            pixels_overlays.update(_knee_overlay(run.law2_points(), knee, run.label))
        curve = accuracy.get(run.run_id) or accuracy.get(run.label)
        if curve is not None:
            keys = curve.input_keys or tuple(
                r.input_key for r in run.ok_records()[: len(curve.scores)]
            )
            pts = []
            for key, score in zip(keys, curve.scores):
                try:
                    pts.append((float(Resolution.parse(key).pixels), score))
                except InputError:
                    pts.append((float(len(pts)), score))
            acc_series[run.label] = pts

    _plot_series(
        out_dir, "auc_vs_tokens", "CPU AUC vs input tokens",
        "input tokens", "CPU AUC (pct-seconds)", tokens_series, tokens_overlays,
    )
    _plot_series(
        out_dir, "auc_vs_pixels", "CPU AUC vs nominal pixels",
        "nominal pixels", "CPU AUC (pct-seconds)", pixels_series, pixels_overlays,
    )
    _plot_series(
        out_dir, "tps_vs_pixels", "Throughput vs nominal pixels",
        "nominal pixels", "tokens/s", tps_series,
    )
    _plot_series(
        out_dir, "accuracy_vs_pixels", "Similarity score vs nominal pixels",
        "nominal pixels", "similarity (0-1)", acc_series,
    )

    if provenance:
        mapping = {
            "summary.csv": {
                run.label: {
                    "run_id": run.run_id,
                    "run_dir": str(run.run_dir),
                    "record_indices": [r.index for r in run.ok_records()],
                    "flagged_indices": [r.index for r in run.records if r.flagged],
                }
                for run in runs
            },
            "figures": {
                name: "one (x, y) row per unflagged record, series keyed by run label"
                for name in FIGURES
            },
        }
        (out_dir / "provenance.json").write_text(json.dumps(mapping, indent=2))

    return payload
