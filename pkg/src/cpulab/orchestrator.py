"""Input sweeps, backend drivers, and run execution.

A run is strictly serial: settle, issue one prompt, capture the completion,
settle again, repeat — the sampler runs concurrently the whole time. Two
backend transports exist. A persistent session keeps one process alive and
speaks one JSON object per line over stdin/stdout (request:
``{id, prompt, image, max_tokens}``, response:
``{id, text, tokens_in, tokens_out}``). A stateless CLI launches the
backend per prompt from an argv template with ``{model}``,
``{prompt_file}``, ``{image}`` and ``{max_tokens}`` placeholders, reads the
completion from stdout, and parses a trailing
``usage: tokens_in=N tokens_out=M`` line when present. The mock backend
drives either transport with a programmable cost function.
"""

from __future__ import annotations

import json
import os
import queue
import re
import subprocess
import sys
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

from PIL import Image

from .clamp_model import ClampSpec, Resolution
from .errors import BackendError, InputError, OutOfRangeError
from .sampler import SamplerConfig, start_sampling
from .trace_core import (
    EnergyTrace,
    IdleBaseline,
    InferenceWindow,
    ResourceTrace,
    auc_above_baseline,
    load_energy_trace,
    load_resource_trace,
    save_energy_trace,
    save_resource_trace,
    throughput,
    window_energy,
)
from .windowing import (
    DetectionParams,
    detect_inference_windows,
    estimate_idle_baseline,
    save_windows,
    split_window_at_dip,
)

MODE_PERSISTENT = "persistent-session"
MODE_STATELESS = "stateless-cli"
MODE_MOCK = "mock"

ARTIFACT_ROOT_ENV = "CPULAB_ARTIFACTS"

_USAGE_RE = re.compile(r"^usage:\s*tokens_in=(\d+)\s+tokens_out=(\d+)\s*$", re.M)

_TEMPLATE_PATH = Path(__file__).parent / "templates" / "vlm_reasoning_prompt.txt"


def estimate_tokens(text: str) -> int:
    """Whitespace token count, the fallback when no backend usage exists."""
    return len(text.split())


def artifact_root() -> Path:
    return Path(os.environ.get(ARTIFACT_ROOT_ENV, "runs"))


# ---------------------------------------------------------------------------
# Sweep construction


@dataclass
class PromptLadder:
    """Cumulative prompts: each one extends the previous with a new segment."""

    segments: list[str]
    prompts: list[str]
    token_counts: list[int]

    def __len__(self) -> int:
        return len(self.prompts)


def build_prompt_ladder(segments: list[str]) -> PromptLadder:
    """Build the cumulative prompt sequence from text segments.

    Segments are joined with single spaces, so prompt i is a prefix
    extension of prompt i-1. Token counts start as whitespace estimates and
    are replaced by backend-reported usage after a run.

    Raises:
        InputError: no segments, or an empty segment.
    """
    if not segments:
        raise InputError("segment list is empty")
    if any(not s.strip() for s in segments):
        raise InputError("segments must be nonempty")
    prompts: list[str] = []
    acc = ""
    for seg in segments:
        acc = seg if not acc else acc + " " + seg
        prompts.append(acc)
    return PromptLadder(
        segments=list(segments),
        prompts=prompts,
        token_counts=[estimate_tokens(p) for p in prompts],
    )


@dataclass
class ResolutionSweep:
    """Downsampled frames of one source image, largest first."""

    source_image: Path
    steps: list[Resolution]
    frame_paths: list[Path]
    prompt_template: str
    clamp: ClampSpec | None = None

    def __len__(self) -> int:
        return len(self.steps)


def default_prompt_template() -> str:
    return _TEMPLATE_PATH.read_text()


def build_resolution_sweep(
    image: str | Path,
    n: int,
    min_width: int,
    out_dir: str | Path,
    prompt_template: str | None = None,
    clamp: ClampSpec | None = None,
) -> ResolutionSweep:
    """Materialize ``n`` aspect-preserving downscales of ``image``.

    Widths are linearly spaced from the source width down to ``min_width``;
    heights follow the source aspect ratio. Frames are written as PNG into
    ``out_dir``. Pixel counts must come out strictly decreasing, so a
    degenerate configuration (e.g. ``min_width`` equal to the source width
    with n > 1) is rejected.

    Raises:
        InputError: unreadable image, bad n/min_width, or a spacing that
            collapses two steps onto the same resolution.
    """
    image = Path(image)
    try:
        with Image.open(image) as im:
            src_w, src_h = im.size
            src = im.convert("RGB")
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read image {image}: {exc}") from exc
    if n < 1:
        raise InputError(f"n must be >= 1, got {n}")
    if min_width > src_w:
        raise InputError(f"min_width {min_width} exceeds source width {src_w}")
    if min_width < 1:
        raise InputError("min_width must be >= 1")

    if n == 1:
        widths = [src_w]
    else:
        span = src_w - min_width
        widths = [round(src_w - i * span / (n - 1)) for i in range(n)]
    steps: list[Resolution] = []
    for w in widths:
        h = max(1, round(w * src_h / src_w))
        steps.append(Resolution(int(w), int(h)))
    pixel_counts = [r.pixels for r in steps]
    if any(b >= a for a, b in zip(pixel_counts, pixel_counts[1:])):
        raise InputError(
            "resolution steps are not strictly decreasing in pixel count; "
            "reduce n or lower min_width"
        )

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    frame_paths: list[Path] = []
    for r in steps:
        path = out_dir / f"frame_{r.width}x{r.height}.png"
        if (r.width, r.height) == (src_w, src_h):
            src.save(path, format="PNG")
        else:
            src.resize((r.width, r.height), Image.LANCZOS).save(path, format="PNG")
        frame_paths.append(path)

    return ResolutionSweep(
        source_image=image,
        steps=steps,
        frame_paths=frame_paths,
        prompt_template=prompt_template or default_prompt_template(),
        clamp=clamp,
    )


# ---------------------------------------------------------------------------
# Backends


@dataclass(frozen=True)
class MockBackendParams:
    """Cost program for the mock backend (all costs in CPU time)."""

    load_ms: float = 0.0
    per_token_ms: float = 0.0
    per_pixel_ns: float = 0.0
    clamp: ClampSpec | None = None
    output_tokens: int = 32
    stateless: bool = False

    def __post_init__(self):
        for name in ("load_ms", "per_token_ms", "per_pixel_ns"):
            if getattr(self, name) < 0:
                raise InputError(f"{name} must be nonnegative")
        if self.output_tokens < 0:
            raise InputError("output_tokens must be nonnegative")

    def argv_options(self) -> list[str]:
        opts = [
            "--load-ms", str(self.load_ms),
            "--per-token-ms", str(self.per_token_ms),
            "--per-pixel-ns", str(self.per_pixel_ns),
            "--output-tokens", str(self.output_tokens),
        ]
        if self.clamp is not None:
            opts += ["--clamp", str(self.clamp)]
        return opts

    def programmed_cost_s(self, tokens_in: int, effective_px: int = 0) -> float:
        """CPU seconds the mock will burn for one request (load excluded in
        persistent transport, where it is paid once at startup)."""
        per_request = self.per_token_ms / 1e3 * tokens_in + self.per_pixel_ns / 1e9 * effective_px
        return per_request + (self.load_ms / 1e3 if self.stateless else 0.0)


@dataclass(frozen=True)
class BackendSpec:
    """How to reach an inference backend.

    ``command`` is the server argv for persistent sessions or the argv
    template for stateless launches. Mock mode needs no external files; its
    commands are synthesized from ``mock_params``.
    """

    mode: str
    model_ref: str = ""
    command: tuple[str, ...] = ()
    max_tokens: int = 64
    mock_params: MockBackendParams | None = None

    def __post_init__(self):
        if self.mode not in (MODE_PERSISTENT, MODE_STATELESS, MODE_MOCK):
            raise InputError(f"unknown backend mode {self.mode!r}")
        if self.mode == MODE_MOCK and self.mock_params is None:
            raise InputError("mock mode requires mock_params")
        if self.mode != MODE_MOCK and not self.command:
            raise InputError(f"{self.mode} requires a launch command")


def mock_backend(params: MockBackendParams | None = None, **kwargs) -> BackendSpec:
    """Backend spec for the deterministic mock server."""
    if params is None:
        params = MockBackendParams(**kwargs)
    elif kwargs:
        raise InputError("pass either params or keyword options, not both")
    return BackendSpec(mode=MODE_MOCK, mock_params=params)


def format_command(template: tuple[str, ...] | list[str], mapping: dict[str, str]) -> list[str]:
    """Fill argv-template placeholders; elements whose placeholder has no
    value are dropped together with an immediately preceding option flag."""
    out: list[str] = []
    for elem in template:
        try:
            rendered = elem.format_map(mapping)
        except (KeyError, IndexError):
            if out and out[-1].startswith("-"):
                out.pop()
            continue
        out.append(rendered)
    return out


class PersistentSession:
    """One long-lived backend process speaking line-delimited JSON."""

    def __init__(self, argv: list[str], timeout_s: float = 600.0):
        self.timeout_s = timeout_s
        try:
            self.proc = subprocess.Popen(
                argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise BackendError(f"failed to launch backend: {exc}") from exc
        self._lines: queue.Queue[str | None] = queue.Queue()
        self._stderr: list[str] = []
        threading.Thread(target=self._pump_stdout, daemon=True).start()
        threading.Thread(target=self._pump_stderr, daemon=True).start()
        ready = self._read_json(timeout_s)
        if not ready.get("ready"):
            self.close()
            raise BackendError(
                "backend did not signal readiness", stderr=self.stderr_text()
            )

    @property
    def pid(self) -> int:
        return self.proc.pid

    def _pump_stdout(self) -> None:
        assert self.proc.stdout is not None
        for line in self.proc.stdout:
            self._lines.put(line)
        self._lines.put(None)

    def _pump_stderr(self) -> None:
        assert self.proc.stderr is not None
        for line in self.proc.stderr:
            self._stderr.append(line)

    def stderr_text(self) -> str:
        return "".join(self._stderr)

    def _read_json(self, timeout_s: float) -> dict:
        deadline = time.monotonic() + timeout_s
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise BackendError(
                    "timed out waiting for backend response",
                    stderr=self.stderr_text(),
                )
            try:
                line = self._lines.get(timeout=min(remaining, 1.0))
            except queue.Empty:
                continue
            if line is None:
                raise BackendError(
                    "backend exited mid-session", stderr=self.stderr_text()
                )
            line = line.strip()
            if not line:
                continue
            try:
                return json.loads(line)
            except json.JSONDecodeError:
                continue  # tolerate stray log lines on stdout

    def ask(self, req_id: int, prompt: str, image: str | None, max_tokens: int) -> dict:
        assert self.proc.stdin is not None
        req = {"id": req_id, "prompt": prompt, "image": image, "max_tokens": max_tokens}
        try:
            self.proc.stdin.write(json.dumps(req) + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise BackendError(
                f"backend pipe closed: {exc}", stderr=self.stderr_text()
            ) from exc
        while True:
            resp = self._read_json(self.timeout_s)
            if resp.get("id") == req_id:
                return resp

    def close(self) -> None:
        try:
            if self.proc.stdin:
                self.proc.stdin.close()
            self.proc.wait(timeout=10.0)
        except (OSError, subprocess.TimeoutExpired):
            self.proc.kill()
            self.proc.wait()


def parse_cli_output(stdout: str) -> tuple[str, int | None, int | None]:
    """Split a stateless backend's stdout into completion text and usage."""
    match = _USAGE_RE.search(stdout)
    if match is None:
        return stdout.strip(), None, None
    text = (stdout[: match.start()] + stdout[match.end():]).strip()
    return text, int(match.group(1)), int(match.group(2))


# ---------------------------------------------------------------------------
# Run artifacts


@dataclass
class StepRecord:
    """Everything measured for one sweep step."""

    index: int
    input_key: str
    prompt_id: str
    tokens_in: int
    tokens_out: int
    issue_t: float
    reply_t: float
    window_start: float | None = None
    window_end: float | None = None
    cpu_auc: float | None = None
    ram_auc: float | None = None
    duration_s: float | None = None
    throughput_tps: float | None = None
    wh: float | None = None
    wh_max_bound: float | None = None
    max_power_w: float | None = None
    output_file: str = ""
    flagged: bool = False
    note: str = ""

    @property
    def window(self) -> InferenceWindow | None:
        if self.window_start is None or self.window_end is None:
            return None
        return InferenceWindow(self.window_start, self.window_end, self.prompt_id)

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "StepRecord":
        return cls(**d)


@dataclass
class RunArtifacts:
    """A completed (or loaded) run: metadata, per-step records, traces."""

    run_dir: Path
    metadata: dict
    records: list[StepRecord]
    baseline: IdleBaseline | None = None
    _trace: ResourceTrace | None = field(default=None, repr=False)
    _energy: EnergyTrace | None = field(default=None, repr=False)

    @property
    def run_id(self) -> str:
        return self.metadata.get("run_id", "")

    @property
    def label(self) -> str:
        return self.metadata.get("label") or self.metadata.get("model_ref") or self.run_id

    def trace(self) -> ResourceTrace:
        if self._trace is None:
            self._trace = load_resource_trace(self.run_dir / "resource_trace.txt")
        return self._trace

    def energy(self) -> EnergyTrace | None:
        if self._energy is None:
            path = self.run_dir / "energy_trace.txt"
            if path.exists():
                self._energy = load_energy_trace(path)
        return self._energy

    def ok_records(self) -> list[StepRecord]:
        return [r for r in self.records if not r.flagged]

    def metrics_by_key(self) -> dict[str, StepRecord]:
        return {r.input_key: r for r in self.ok_records()}

    def law1_points(self) -> list[tuple[float, float]]:
        """(input tokens, CPU AUC) pairs for token-scaling fits."""
        return [
            (float(r.tokens_in), float(r.cpu_auc))
            for r in self.ok_records()
            if r.cpu_auc is not None
        ]

    def _pixels(self, record: StepRecord) -> int | None:
        try:
            return Resolution.parse(record.input_key).pixels
        except InputError:
            return None

    def law2_points(self) -> list[tuple[float, float]]:
        """(nominal pixels, CPU AUC) pairs for resolution-scaling fits."""
        out = []
        for r in self.ok_records():
            px = self._pixels(r)
            if px is not None and r.cpu_auc is not None:
                out.append((float(px), float(r.cpu_auc)))
        return out

    def tps_points(self) -> list[tuple[float, float]]:
        out = []
        for r in self.ok_records():
            px = self._pixels(r)
            if px is not None and r.throughput_tps is not None:
                out.append((float(px), float(r.throughput_tps)))
        return out

    def save_records(self) -> None:
        payload = {
            "metadata": self.metadata,
            "baseline": None
            if self.baseline is None
            else {
                "cpu_pct": self.baseline.cpu_pct,
                "ram_mb": self.baseline.ram_mb,
                "n_samples": self.baseline.n_samples,
                "dispersion": self.baseline.dispersion,
            },
            "records": [r.to_dict() for r in self.records],
        }
        (self.run_dir / "records.json").write_text(json.dumps(payload, indent=2))

    @classmethod
    def load(cls, run_dir: str | Path) -> "RunArtifacts":
        run_dir = Path(run_dir)
        path = run_dir / "records.json"
        if not path.exists():
            raise InputError(f"{run_dir} has no records.json (run `analyze` first?)")
        payload = json.loads(path.read_text())
        baseline = None
        if payload.get("baseline"):
            baseline = IdleBaseline(**payload["baseline"])
        return cls(
            run_dir=run_dir,
            metadata=payload.get("metadata", {}),
            records=[StepRecord.from_dict(d) for d in payload.get("records", [])],
            baseline=baseline,
        )


# ---------------------------------------------------------------------------
# Run execution


@dataclass(frozen=True)
class _StepInput:
    index: int
    input_key: str
    prompt: str
    image: Path | None = None
    resolution: Resolution | None = None


def _sweep_steps(sweep: PromptLadder | ResolutionSweep) -> list[_StepInput]:
    if isinstance(sweep, PromptLadder):
        return [
            _StepInput(index=i, input_key=str(est), prompt=prompt)
            for i, (prompt, est) in enumerate(zip(sweep.prompts, sweep.token_counts))
        ]
    return [
        _StepInput(
            index=i,
            input_key=str(res),
            prompt=sweep.prompt_template,
            image=path,
            resolution=res,
        )
        for i, (res, path) in enumerate(zip(sweep.steps, sweep.frame_paths))
    ]


def _overlap(a0: float, a1: float, b0: float, b1: float) -> float:
    return max(0.0, min(a1, b1) - max(a0, b0))


def match_windows_to_steps(
    windows: list[InferenceWindow], spans: list[tuple[float, float]]
) -> list[InferenceWindow | None]:
    """Pair detected windows with per-step [issue, reply] spans.

    A window containing the issue timestamp wins outright; otherwise the
    window with maximal overlap is taken. Steps with no overlapping window
    get None.
    """
    out: list[InferenceWindow | None] = []
    for issue_t, reply_t in spans:
        containing = [w for w in windows if w.start_t <= issue_t <= w.end_t]
        if containing:
            out.append(containing[0])
            continue
        best, best_ov = None, 0.0
        for w in windows:
            ov = _overlap(w.start_t, w.end_t, issue_t, reply_t)
            if ov > best_ov:
                best, best_ov = w, ov
        out.append(best)
    return out


def _default_mock_commands(params: MockBackendParams) -> tuple[list[str], list[str]]:
    base = [sys.executable, "-m", "cpulab.backends.mock_server"]
    server = base + params.argv_options()
    oneshot = (
        base
        + ["--oneshot", "--prompt-file", "{prompt_file}", "--image", "{image}"]
        + params.argv_options()
    )
    return server, oneshot


def integrate_run(
    run_dir: str | Path,
    detection: DetectionParams = DetectionParams(),
    pre_window_s: float = 3.0,
    split_load: bool = False,
) -> RunArtifacts:
    """(Re-)derive baseline, windows, and metrics for a recorded run.

    The same path serves freshly recorded runs and imported third-party
    traces: it needs only ``resource_trace.txt`` plus, when present,
    ``steps.jsonl`` (raw per-step log) and ``energy_trace.txt``.
    """
    run_dir = Path(run_dir)
    trace = load_resource_trace(run_dir / "resource_trace.txt")
    energy_path = run_dir / "energy_trace.txt"
    energy = load_energy_trace(energy_path) if energy_path.exists() else None

    meta_path = run_dir / "config.json"
    metadata = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    metadata.setdefault("run_id", trace.run_id)
    metadata.setdefault("device", trace.device)

    steps_raw: list[dict] = []
    steps_path = run_dir / "steps.jsonl"
    if steps_path.exists():
        for line in steps_path.read_text().splitlines():
            if line.strip():
                steps_raw.append(json.loads(line))

    # the span right before the first prompt is always an idle settle,
    # in both launch orders (backend-scoped and orchestrator-scoped runs)
    first_event = steps_raw[0]["issue_t"] if steps_raw else None
    baseline = estimate_idle_baseline(trace, pre_window_s, end_t=first_event)
    windows = detect_inference_windows(trace, baseline, detection)
    save_windows(windows, run_dir / "windows.txt")

    records: list[StepRecord] = []
    if steps_raw:
        spans = [(s["issue_t"], s["reply_t"]) for s in steps_raw]
        matched = match_windows_to_steps(windows, spans)
        seen: dict[tuple[float, float], int] = {}
        for raw, win in zip(steps_raw, matched):
            rec = StepRecord(
                index=raw["index"],
                input_key=raw["input_key"],
                prompt_id=raw.get("prompt_id", f"step{raw['index']:03d}"),
                tokens_in=raw.get("tokens_in", 0),
                tokens_out=raw.get("tokens_out", 0),
                issue_t=raw["issue_t"],
                reply_t=raw["reply_t"],
                output_file=raw.get("output_file", ""),
            )
            if win is None:
                rec.flagged = True
                rec.note = "no inference window detected"
            else:
                if split_load:
                    parts = split_window_at_dip(trace, win, baseline)
                    if len(parts) == 2:
                        rec.note = (
                            f"load phase split off: [{parts[0].start_t:.3f}, "
                            f"{parts[0].end_t:.3f}]"
                        )
                        win = parts[1]
                key = (win.start_t, win.end_t)
                if key in seen:
                    rec.flagged = True
                    rec.note = f"window shared with step {seen[key]}"
                seen.setdefault(key, rec.index)
                cpu_auc, ram_auc = auc_above_baseline(trace, win, baseline)
                rec.window_start, rec.window_end = win.start_t, win.end_t
                rec.cpu_auc, rec.ram_auc = cpu_auc, ram_auc
                rec.duration_s = win.duration_s
                rec.throughput_tps = throughput(rec.tokens_out, win)
                if energy is not None:
                    try:
                        we = window_energy(energy, win)
                        rec.wh = we.wh_integrated
                        rec.wh_max_bound = we.wh_max_bound
                        rec.max_power_w = we.max_power_w
                    except OutOfRangeError:
                        rec.note = (rec.note + "; " if rec.note else "") + "no energy overlap"
            records.append(rec)
    else:
        # Imported trace without step logs: windows become the records.
        for i, win in enumerate(windows):
            cpu_auc, ram_auc = auc_above_baseline(trace, win, baseline)
            records.append(
                StepRecord(
                    index=i,
                    input_key=win.prompt_id or f"win{i:03d}",
                    prompt_id=win.prompt_id,
                    tokens_in=0,
                    tokens_out=0,
                    issue_t=win.start_t,
                    reply_t=win.end_t,
                    window_start=win.start_t,
                    window_end=win.end_t,
                    cpu_auc=cpu_auc,
                    ram_auc=ram_auc,
                    duration_s=win.duration_s,
                    throughput_tps=0.0,
                )
            )

    artifacts = RunArtifacts(
        run_dir=run_dir,
        metadata=metadata,
        records=records,
        baseline=baseline,
        _trace=trace,
        _energy=energy,
    )
    artifacts.save_records()
    return artifacts


def run_sweep(
    backend: BackendSpec,
    sweep: PromptLadder | ResolutionSweep,
    sampler_cfg: SamplerConfig | None = None,
    *,
    out_dir: str | Path | None = None,
    settle_s: float = 3.0,
    detection: DetectionParams = DetectionParams(),
    timeout_s: float = 600.0,
    split_load: bool = False,
    label: str = "",
) -> RunArtifacts:
    """Execute a sweep against a backend while sampling resource usage.

    For each step: idle settle, prompt issued, completion captured; after
    the loop, windows are detected, matched to steps by issue time, and
    integrated into per-step metrics. Raw step outcomes are appended to
    ``steps.jsonl`` as they complete, so a crash loses at most the step in
    flight. Undetectable windows flag their step; the run continues.

    Raises:
        BackendError: the backend cannot be launched or dies mid-run.
        InputError: settle period too short for baseline estimation.
    """
    sampler_cfg = sampler_cfg or SamplerConfig()
    if settle_s * sampler_cfg.rate_hz < 5:
        raise InputError(
            f"settle_s={settle_s} at {sampler_cfg.rate_hz} Hz leaves fewer than "
            "5 baseline samples; lengthen the settle or raise the rate"
        )

    run_id = uuid.uuid4().hex[:12]
    run_dir = Path(out_dir) if out_dir else artifact_root() / f"run-{run_id}"
    run_dir.mkdir(parents=True, exist_ok=True)
    outputs_dir = run_dir / "outputs"
    outputs_dir.mkdir(exist_ok=True)

    steps = _sweep_steps(sweep)
    is_ladder = isinstance(sweep, PromptLadder)

    mock = backend.mock_params
    if backend.mode == MODE_MOCK:
        server_cmd, oneshot_template = _default_mock_commands(mock)
        stateless = mock.stateless
    elif backend.mode == MODE_STATELESS:
        server_cmd, oneshot_template = None, list(backend.command)
        stateless = True
    else:
        server_cmd = format_command(backend.command, {"model": backend.model_ref})
        oneshot_template, stateless = None, False

    metadata = {
        "run_id": run_id,
        "label": label,
        "backend_mode": backend.mode,
        "transport": MODE_STATELESS if stateless else MODE_PERSISTENT,
        "model_ref": backend.model_ref,
        "sweep_kind": "prompt-ladder" if is_ladder else "resolution-sweep",
        "n_steps": len(steps),
        "settle_s": settle_s,
        "sampler": {
            "rate_hz": sampler_cfg.rate_hz,
            "scope": str(sampler_cfg.scope),
        },
        "clamp": str(sweep.clamp) if getattr(sweep, "clamp", None) else None,
        "max_tokens": backend.max_tokens,
        "backend_launches": 0,
        "resolution_spacing": "linear-width" if not is_ladder else None,
    }
    if backend.mode == MODE_MOCK:
        metadata["mock_params"] = {
            "load_ms": mock.load_ms,
            "per_token_ms": mock.per_token_ms,
            "per_pixel_ns": mock.per_pixel_ns,
            "clamp": str(mock.clamp) if mock.clamp else None,
            "output_tokens": mock.output_tokens,
            "stateless": mock.stateless,
        }
    (run_dir / "config.json").write_text(json.dumps(metadata, indent=2))

    backend_scoped = sampler_cfg.scope == "backend"
    if backend_scoped and stateless:
        raise InputError(
            "scope='backend' needs a persistent transport; stateless launches "
            "have no long-lived process to root the sampler at"
        )

    launches = 0
    session: PersistentSession | None = None
    if backend_scoped:
        # Launch first, then sample the server's own tree: the sampler and
        # orchestrator never pollute the measured signal. The load burst
        # happens before sampling starts, so no launch window appears.
        session = PersistentSession(server_cmd, timeout_s=timeout_s)
        launches += 1

    spool = run_dir / "resource_trace.txt"
    cfg = SamplerConfig(
        rate_hz=sampler_cfg.rate_hz,
        scope=session.pid if backend_scoped else sampler_cfg.scope,
        energy_source=sampler_cfg.energy_source,
        energy_time_offset=sampler_cfg.energy_time_offset,
        spool_path=spool,
        child_refresh_s=sampler_cfg.child_refresh_s,
        device=sampler_cfg.device,
    )
    try:
        handle = start_sampling(cfg)
    except Exception:
        if session is not None:
            session.close()
        raise
    metadata["run_id"] = handle.run_id
    steps_fh = (run_dir / "steps.jsonl").open("w")

    try:
        time.sleep(settle_s)  # idle span for the baseline estimate
        if not stateless and session is None:
            session = PersistentSession(server_cmd, timeout_s=timeout_s)
            launches += 1
            handle.watch(session.pid)
            time.sleep(settle_s)  # separate load burst from the first window

        for step in steps:
            out_file = outputs_dir / f"step_{step.index:03d}.txt"
            if stateless:
                prompt_file = outputs_dir / f"prompt_{step.index:03d}.txt"
                prompt_file.write_text(step.prompt)
                mapping = {
                    "model": backend.model_ref,
                    "prompt_file": str(prompt_file),
                    "max_tokens": str(backend.max_tokens),
                }
                if step.image is not None:
                    mapping["image"] = str(step.image)
                argv = format_command(oneshot_template, mapping)
                issue_t = handle.elapsed()
                try:
                    proc = subprocess.Popen(
                        argv,
                        stdout=subprocess.PIPE,
                        stderr=subprocess.PIPE,
                        text=True,
                    )
                except OSError as exc:
                    raise BackendError(f"failed to launch backend: {exc}") from exc
                launches += 1
                handle.watch(proc.pid)
                try:
                    stdout, stderr = proc.communicate(timeout=timeout_s)
                except subprocess.TimeoutExpired:
                    proc.kill()
                    raise BackendError(
                        f"backend timed out on step {step.index}", stderr=""
                    )
                reply_t = handle.elapsed()
                if proc.returncode != 0:
                    raise BackendError(
                        f"backend exited with {proc.returncode} on step {step.index}",
                        stderr=stderr,
                    )
                text, tokens_in, tokens_out = parse_cli_output(stdout)
            else:
                issue_t = handle.elapsed()
                resp = session.ask(
                    step.index,
                    step.prompt,
                    str(step.image) if step.image else None,
                    backend.max_tokens,
                )
                reply_t = handle.elapsed()
                text = resp.get("text", "")
                tokens_in = resp.get("tokens_in")
                tokens_out = resp.get("tokens_out")

            if tokens_in is None:
                tokens_in = estimate_tokens(step.prompt)
            if tokens_out is None:
                tokens_out = estimate_tokens(text)
            out_file.write_text(text)

            raw = {
                "index": step.index,
                "input_key": step.input_key,
                "prompt_id": f"step{step.index:03d}",
                "tokens_in": tokens_in,
                "tokens_out": tokens_out,
                "issue_t": issue_t,
                "reply_t": reply_t,
                "output_file": str(out_file.relative_to(run_dir)),
            }
            steps_fh.write(json.dumps(raw) + "\n")
            steps_fh.flush()

            if is_ladder:
                sweep.token_counts[step.index] = tokens_in
            time.sleep(settle_s)
    finally:
        if session is not None:
            session.close()
        steps_fh.close()
        trace, energy = handle.stop()

    if energy is not None:
        save_energy_trace(energy, run_dir / "energy_trace.txt")
    # The spool already wrote the trace; rewrite for a consistent header.
    save_resource_trace(trace, run_dir / "resource_trace.txt")

    metadata["backend_launches"] = launches
    metadata["device"] = trace.device
    (run_dir / "config.json").write_text(json.dumps(metadata, indent=2))

    artifacts = integrate_run(
        run_dir,
        detection=detection,
        pre_window_s=settle_s,
        split_load=split_load,
    )
    return artifacts
