"""Command-line surface.

Subcommands:
    ladder    run a cumulative prompt ladder against a backend
    sweep     run an image resolution sweep against a backend
    analyze   (re-)derive windows and metrics for a recorded run directory
    fit       affine fit of a two-column points file
    knee      changepoint fit of a (pixels, auc) points file
    compare   matched-input comparison of two analyzed runs
    report    tables and figures for one or more analyzed runs
    score     similarity scores for outputs against references

Every subcommand accepts ``--config FILE`` (TOML or JSON); explicit flags
override config values. Exit codes: 0 success, 1 operation failure,
2 usage error.
"""

from __future__ import annotations

import argparse
import json
import shlex
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import __version__
from .errors import CpuLabError, InputError

_HARD_DEFAULTS = {
    "rate_hz": 5.0,
    "scope": "system",
    "settle_s": 3.0,
    "smooth_span": 3,
    "rise_threshold": 5.0,
    "min_duration_s": 1.0,
    "min_gap_s": 2.0,
    "max_tokens": 64,
    "steps": 20,
    "min_width": 96,
    "segment_words": 25,
    "load_ms": 100.0,
    "per_token_ms": 2.0,
    "per_pixel_ns": 0.0,
    "output_tokens": 32,
    "timeout_s": 600.0,
}


def load_config(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.exists():
        raise InputError(f"config file not found: {p}")
    if p.suffix == ".toml":
        with p.open("rb") as fh:
            return tomllib.load(fh)
    return json.loads(p.read_text())


class Settings:
    """Flag-over-config-over-default resolution."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.config = load_config(getattr(args, "config", None))

    def get(self, key: str, section: str = "", default=None):
        val = getattr(self.args, key, None)
        if val is not None:
            return val
        sect = self.config.get(section, {}) if section else self.config
        if isinstance(sect, dict) and key in sect:
            return sect[key]
        if key in self.config:
            return self.config[key]
        if default is not None:
            return default
        return _HARD_DEFAULTS.get(key)


def _sampler_config(s: Settings):
    from .sampler import SamplerConfig, system_counters_available

    scope = s.get("scope", "sampler")
    if scope == "process":
        import os

        scope = os.getpid()
    elif scope not in (None, "system"):
        try:
            scope = int(scope)
        except (TypeError, ValueError):
            pass
    if scope == "system" and not system_counters_available():
        import os

        print(
            "note: system-wide CPU counters unavailable; falling back to "
            "process-tree scope",
            file=sys.stderr,
        )
        scope = os.getpid()
    return SamplerConfig(
        rate_hz=float(s.get("rate_hz", "sampler")),
        scope=scope,
        energy_source=s.get("energy_source", "sampler"),
        energy_time_offset=float(s.get("energy_time_offset", "sampler", 0.0) or 0.0),
        device=str(s.get("device", "sampler", "") or ""),
    )


def _detection_params(s: Settings):
    from .windowing import DetectionParams

    return DetectionParams(
        smooth_span=int(s.get("smooth_span", "detection")),
        rise_threshold=float(s.get("rise_threshold", "detection")),
        min_duration_s=float(s.get("min_duration_s", "detection")),
        min_gap_s=float(s.get("min_gap_s", "detection")),
    )


def _backend_spec(s: Settings):
    from .clamp_model import ClampSpec
    from .orchestrator import (
        MODE_MOCK,
        BackendSpec,
        MockBackendParams,
        mock_backend,
    )

    mode = s.get("backend", "backend", "mock")
    max_tokens = int(s.get("max_tokens", "backend"))
    if mode == "mock":
        clamp = s.get("clamp", "backend", "")
        params = MockBackendParams(
            load_ms=float(s.get("load_ms", "backend")),
            per_token_ms=float(s.get("per_token_ms", "backend")),
            per_pixel_ns=float(s.get("per_pixel_ns", "backend")),
            clamp=ClampSpec.parse(clamp) if clamp else None,
            output_tokens=int(s.get("output_tokens", "backend")),
            stateless=bool(s.get("stateless", "backend", False)),
        )
        spec = mock_backend(params)
        return BackendSpec(
            mode=MODE_MOCK, mock_params=spec.mock_params, max_tokens=max_tokens
        )
    command = s.get("command", "backend", "")
    if isinstance(command, str):
        command = tuple(shlex.split(command))
    return BackendSpec(
        mode=mode,
        model_ref=str(s.get("model", "backend", "") or ""),
        command=tuple(command),
        max_tokens=max_tokens,
    )


def _load_points(path: str) -> list[tuple[float, float]]:
    p = Path(path)
    if not p.exists():
        raise InputError(f"points file not found: {p}")
    pts = []
    for line in p.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.replace(",", " ").split()
        if len(parts) < 2:
            continue
        try:
            pts.append((float(parts[0]), float(parts[1])))
        except ValueError:
            continue  # header row
    if not pts:
        raise InputError(f"no numeric (x, y) rows found in {path}")
    return pts


def _read_texts(path: str) -> list[str]:
    p = Path(path)
    if p.is_dir():
        return [f.read_text().strip() for f in sorted(p.glob("*.txt"))]
    return [line for line in p.read_text().splitlines()]


# ---------------------------------------------------------------------------
# Subcommand handlers


def cmd_ladder(args: argparse.Namespace) -> int:
    from .orchestrator import build_prompt_ladder, run_sweep

    s = Settings(args)
    if args.segments_file:
        segments = [
            seg for seg in Path(args.segments_file).read_text().splitlines() if seg.strip()
        ]
    else:
        n = int(s.get("steps", "sweep"))
        words = int(s.get("segment_words", "sweep"))
        segments = [
            " ".join(f"w{i:03d}s{j:03d}" for j in range(words)) for i in range(n)
        ]
    ladder = build_prompt_ladder(segments)
    artifacts = run_sweep(
        _backend_spec(s),
        ladder,
        _sampler_config(s),
        out_dir=args.out,
        settle_s=float(s.get("settle_s", "run")),
        detection=_detection_params(s),
        timeout_s=float(s.get("timeout_s", "run")),
        split_load=bool(args.split_load),
        label=args.label or "",
    )
    flagged = sum(1 for r in artifacts.records if r.flagged)
    print(f"run dir: {artifacts.run_dir}")
    print(f"steps: {len(artifacts.records)}  flagged: {flagged}")
    return 0


def _synthetic_image(path: Path, width: int = 1920, height: int = 1080) -> Path:
    """A deterministic high-frequency test image for mock sweeps."""
    import numpy as np
    from PIL import Image

    rng = np.random.default_rng(7)
    noise = rng.integers(0, 255, size=(height, width, 3), dtype=np.uint8)
    yy, xx = np.mgrid[0:height, 0:width]
    grad = ((xx * 255) // max(1, width - 1)).astype(np.uint8)
    arr = (noise // 2 + grad[..., None] // 2).astype(np.uint8)
    Image.fromarray(arr, "RGB").save(path, format="PNG")
    return path


def cmd_sweep(args: argparse.Namespace) -> int:
    from .clamp_model import ClampSpec
    from .orchestrator import artifact_root, build_resolution_sweep, run_sweep
    import uuid

    s = Settings(args)
    out_dir = Path(args.out) if args.out else artifact_root() / f"run-{uuid.uuid4().hex[:12]}"
    out_dir.mkdir(parents=True, exist_ok=True)

    image = args.image or s.get("image", "sweep", "")
    backend = _backend_spec(s)
    if not image:
        if backend.mode != "mock":
            raise InputError("--image is required for non-mock backends")
        image = _synthetic_image(out_dir / "source.png")
    clamp_text = s.get("clamp", "sweep", "") or s.get("clamp", "backend", "")
    clamp = ClampSpec.parse(clamp_text) if clamp_text else None
    sweep = build_resolution_sweep(
        image,
        n=int(s.get("steps", "sweep")),
        min_width=int(s.get("min_width", "sweep")),
        out_dir=out_dir / "frames",
        clamp=clamp,
    )
    artifacts = run_sweep(
        backend,
        sweep,
        _sampler_config(s),
        out_dir=out_dir,
        settle_s=float(s.get("settle_s", "run")),
        detection=_detection_params(s),
        timeout_s=float(s.get("timeout_s", "run")),
        split_load=bool(args.split_load),
        label=args.label or "",
    )
    flagged = sum(1 for r in artifacts.records if r.flagged)
    print(f"run dir: {artifacts.run_dir}")
    print(f"steps: {len(artifacts.records)}  flagged: {flagged}")
    return 0


def cmd_analyze(args: argparse.Namespace) -> int:
    from .orchestrator import integrate_run

    s = Settings(args)
    artifacts = integrate_run(
        args.run_dir,
        detection=_detection_params(s),
        pre_window_s=float(s.get("settle_s", "run")),
        split_load=bool(args.split_load),
    )
    flagged = sum(1 for r in artifacts.records if r.flagged)
    print(f"records: {len(artifacts.records)}  flagged: {flagged}")
    print(f"wrote {artifacts.run_dir / 'records.json'}")
    return 0


def cmd_fit(args: argparse.Namespace) -> int:
    from .analysis import fit_linear

    fit = fit_linear(_load_points(args.input), method=args.method)
    print(f"a = {fit.a:.6g}")
    print(f"b = {fit.b:.6g}")
    print(f"r2 = {fit.r2:.6g}")
    print(f"n = {fit.n}")
    return 0


def cmd_knee(args: argparse.Namespace) -> int:
    from .analysis import detect_knee
    from .clamp_model import ClampSpec

    hint = ClampSpec.parse(args.hint) if args.hint else None
    knee = detect_knee(_load_points(args.input), hint=hint)
    print(f"knee_pixels = {knee.knee_pixels:.6g}")
    print(f"c_flat = {knee.c_flat:.6g}")
    print(f"below = {knee.below_intercept:.6g} + {knee.below_slope:.6g} * pixels")
    print(f"confident = {knee.confident}")
    if knee.hint_offset_steps is not None:
        print(f"hint_offset_steps = {knee.hint_offset_steps}")
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    from .analysis import compare_models
    from .orchestrator import RunArtifacts

    base = RunArtifacts.load(args.base)
    comp = RunArtifacts.load(args.comp)
    rep = compare_models(base.metrics_by_key(), comp.metrics_by_key())
    for ch, val in rep.mean_reduction.items():
        if val is not None:
            print(f"mean {ch} reduction: {val:.2f}%")
    print(f"speedup: {rep.speedup:.3g}x over {rep.n_inputs} inputs")
    print(f"wins: {rep.wins}/{rep.n_inputs}")
    if args.out:
        from dataclasses import asdict

        Path(args.out).write_text(json.dumps(asdict(rep), indent=2))
        print(f"wrote {args.out}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    from .analysis import compare_models
    from .orchestrator import RunArtifacts
    from .report import emit_summary
    from .scoring import AccuracyCurve

    runs = [RunArtifacts.load(d) for d in args.run_dirs]
    accuracy = {}
    for run in runs:
        acc_path = run.run_dir / "accuracy.json"
        if acc_path.exists():
            data = json.loads(acc_path.read_text())
            accuracy[run.run_id] = AccuracyCurve(
                scores=tuple(data["scores"]),
                removed_indices=tuple(data["removed_indices"]),
                variant=data.get("variant", "unknown"),
                fallback=bool(data.get("fallback", True)),
                input_keys=tuple(data.get("input_keys", ())),
            )
    comparisons = []
    if args.compare:
        if len(runs) != 2:
            raise InputError("--compare needs exactly two run dirs (base comp)")
        rep = compare_models(runs[0].metrics_by_key(), runs[1].metrics_by_key())
        comparisons.append((runs[0].label, runs[1].label, rep))
    emit_summary(
        runs,
        comparisons=comparisons,
        out_dir=args.out,
        accuracy=accuracy,
        provenance=args.provenance,
    )
    print(f"wrote report for {len(runs)} run(s) to {args.out}")
    if args.provenance:
        mapping = json.loads(Path(args.out, "provenance.json").read_text())
        print(json.dumps(mapping, indent=2))
    return 0


def cmd_score(args: argparse.Namespace) -> int:
    from .scoring import accuracy_curve, score_pairs

    if args.run:
        outputs = sorted(Path(args.run, "outputs").glob("step_*.txt"))
        candidates = [p.read_text().strip() for p in outputs]
    elif args.candidates:
        candidates = _read_texts(args.candidates)
    else:
        raise InputError("provide --run or --candidates")
    references = _read_texts(args.references)
    if len(candidates) != len(references):
        raise InputError(
            f"{len(candidates)} candidates vs {len(references)} references"
        )
    scorer_cmd = shlex.split(args.scorer_cmd) if args.scorer_cmd else None
    scored, variant, fallback = score_pairs(
        list(zip(candidates, references)), scorer_cmd
    )
    curve = accuracy_curve(scored, variant, fallback)
    out = {
        "scores": list(curve.scores),
        "removed_indices": list(curve.removed_indices),
        "variant": curve.variant,
        "fallback": curve.fallback,
        "mean": curve.mean,
        "input_keys": [],
    }
    out_path = Path(args.out) if args.out else (Path(args.run) / "accuracy.json" if args.run else None)
    if out_path:
        out_path.write_text(json.dumps(out, indent=2))
        print(f"wrote {out_path}")
    print(f"mean similarity: {curve.mean:.4f}  variant: {variant}"
          + ("  [fallback]" if fallback else ""))
    print(f"removed indices: {list(curve.removed_indices)}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cpulab",
        description="CPU-only inference profiling lab",
    )
    parser.add_argument("--version", action="version", version=f"cpulab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, run_flags: bool = True) -> None:
        p.add_argument("--config", help="TOML or JSON config file")
        if run_flags:
            p.add_argument("--backend", choices=["mock", "persistent-session", "stateless-cli"])
            p.add_argument("--model", help="model file for real backends")
            p.add_argument("--command", help="backend launch command template")
            p.add_argument("--max-tokens", dest="max_tokens", type=int)
            p.add_argument("--load-ms", dest="load_ms", type=float)
            p.add_argument("--per-token-ms", dest="per_token_ms", type=float)
            p.add_argument("--per-pixel-ns", dest="per_pixel_ns", type=float)
            p.add_argument("--output-tokens", dest="output_tokens", type=int)
            p.add_argument("--stateless", action="store_const", const=True)
            p.add_argument("--rate", dest="rate_hz", type=float, help="sampler Hz (1..50)")
            p.add_argument("--sampler-scope", dest="scope", help="'system', 'process', or a pid")
            p.add_argument("--energy-source", dest="energy_source", help="power meter log file")
            p.add_argument("--settle", dest="settle_s", type=float)
            p.add_argument("--timeout", dest="timeout_s", type=float)
            p.add_argument("--smooth-span", dest="smooth_span", type=int)
            p.add_argument("--rise-threshold", dest="rise_threshold", type=float)
            p.add_argument("--min-duration", dest="min_duration_s", type=float)
            p.add_argument("--min-gap", dest="min_gap_s", type=float)
            p.add_argument("--split-load", dest="split_load", action="store_true")
            p.add_argument("--label", help="run label used in reports")
            p.add_argument("--out", help="run artifact directory")

    p = sub.add_parser("ladder", help="run a cumulative prompt ladder")
    common(p)
    p.add_argument("--segments-file", help="one ladder segment per line")
    p.add_argument("--steps", type=int, help="generated segments when no file given")
    p.add_argument("--segment-words", dest="segment_words", type=int)
    p.set_defaults(func=cmd_ladder)

    p = sub.add_parser("sweep", help="run an image resolution sweep")
    common(p)
    p.add_argument("--image", help="source image (synthesized for mock runs if omitted)")
    p.add_argument("--steps", type=int)
    p.add_argument("--min-width", dest="min_width", type=int)
    p.add_argument("--clamp", help="WxH preprocessing bound in effect")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("analyze", help="derive windows and metrics for a run dir")
    p.add_argument("run_dir")
    p.add_argument("--config", help="TOML or JSON config file")
    p.add_argument("--settle", dest="settle_s", type=float)
    p.add_argument("--smooth-span", dest="smooth_span", type=int)
    p.add_argument("--rise-threshold", dest="rise_threshold", type=float)
    p.add_argument("--min-duration", dest="min_duration_s", type=float)
    p.add_argument("--min-gap", dest="min_gap_s", type=float)
    p.add_argument("--split-load", dest="split_load", action="store_true")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("fit", help="affine fit of a points file")
    p.add_argument("--input", required=True, help="CSV/whitespace x,y points")
    p.add_argument("--method", choices=["ols", "theil-sen"], default="ols")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("knee", help="changepoint fit of a (pixels, auc) points file")
    p.add_argument("--input", required=True)
    p.add_argument("--hint", help="expected clamp WxH")
    p.set_defaults(func=cmd_knee)

    p = sub.add_parser("compare", help="compare two analyzed runs")
    p.add_argument("--base", required=True)
    p.add_argument("--comp", required=True)
    p.add_argument("--out", help="write the full report as JSON")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("report", help="emit tables and figures for runs")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--out", default="report")
    p.add_argument("--compare", action="store_true", help="compare the two given runs")
    p.add_argument("--provenance", action="store_true")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("score", help="similarity scores against references")
    p.add_argument("--run", help="run dir whose outputs/ to score")
    p.add_argument("--candidates", help="file or dir of candidate texts")
    p.add_argument("--references", required=True)
    p.add_argument("--scorer-cmd", dest="scorer_cmd", help="external scorer command")
    p.add_argument("--out", help="accuracy JSON output path")
    p.set_defaults(func=cmd_score)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CpuLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
