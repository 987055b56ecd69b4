"""Deterministic stand-in backend with a programmable cost function.

Burns real CPU for
    load_ms + per_token_ms * tokens_in + per_pixel_ns * effective_pixels
per request (effective pixels after the resize-and-clamp operator), so the
whole measurement pipeline can be exercised end to end without any model
files. Two transports:

- persistent session (default): emits a ready line, then answers one JSON
  request per stdin line with one JSON response per stdout line; the load
  cost is burned once at startup.
- ``--oneshot``: reads the prompt from a file, burns load + request cost,
  prints the completion and a ``usage: tokens_in=N tokens_out=M`` line.

Imports stay minimal on purpose: oneshot mode is launched once per prompt
and its startup cost lands inside the measured window.
"""

from __future__ import annotations

import argparse
import json
import os
import struct
import sys
import time

from cpulab.clamp_model import ClampSpec, Resolution, apply_clamp, effective_pixels


try:
    _CLK_TCK = os.sysconf("SC_CLK_TCK")
except (AttributeError, ValueError, OSError):
    _CLK_TCK = 100


def _proc_cpu_seconds() -> float | None:
    """user+system seconds as the kernel accounts them in /proc/self/stat.

    This is the same counter resource samplers read, so burns calibrated
    against it match the measured signal exactly (clock-based CPU time can
    drift a couple percent from it under sandboxed kernels).
    """
    try:
        with open("/proc/self/stat", "rb") as fh:
            data = fh.read()
        fields = data.rsplit(b")", 1)[1].split()
        utime, stime = int(fields[11]), int(fields[12])
        return (utime + stime) / _CLK_TCK
    except (OSError, IndexError, ValueError):
        return None


def busy_burn(cpu_seconds: float) -> None:
    """Spin until this process has consumed the given CPU time."""
    if cpu_seconds <= 0:
        return
    start = _proc_cpu_seconds()
    x = 1.0001
    if start is None:
        target = time.process_time() + cpu_seconds
        while time.process_time() < target:
            x = x * 1.0000001 % 97.0
        return
    target = start + cpu_seconds
    while True:
        cur = _proc_cpu_seconds()
        if cur is None or cur >= target:
            return
        # spin most of the estimated remainder on the cheap clock, then
        # re-check the kernel's ledger
        spin_until = time.process_time() + max((target - cur) * 0.9, 0.002)
        while time.process_time() < spin_until:
            x = x * 1.0000001 % 97.0


def png_dimensions(path: str) -> Resolution:
    """Width/height from a PNG header (IHDR is always the first chunk)."""
    with open(path, "rb") as fh:
        head = fh.read(24)
    if len(head) < 24 or head[:8] != b"\x89PNG\r\n\x1a\n":
        raise ValueError(f"not a PNG file: {path}")
    width, height = struct.unpack(">II", head[16:24])
    return Resolution(int(width), int(height))


def filler_text(n_tokens: int) -> str:
    return " ".join(f"tok{i:04d}" for i in range(n_tokens))


class MockModel:
    def __init__(self, args: argparse.Namespace):
        self.load_s = args.load_ms / 1e3
        self.per_token_s = args.per_token_ms / 1e3
        self.per_pixel_s = args.per_pixel_ns / 1e9
        self.clamp = ClampSpec.parse(args.clamp) if args.clamp else None
        self.output_tokens = args.output_tokens

    def request_cost_s(self, prompt: str, image: str | None) -> tuple[float, int]:
        tokens_in = len(prompt.split())
        cost = self.per_token_s * tokens_in
        if image:
            r = png_dimensions(image)
            u = apply_clamp(r, self.clamp) if self.clamp else r
            cost += self.per_pixel_s * effective_pixels(u)
        return cost, tokens_in

    def answer(self, prompt: str, image: str | None, extra_cost_s: float = 0.0) -> dict:
        cost, tokens_in = self.request_cost_s(prompt, image)
        busy_burn(cost + extra_cost_s)
        return {
            "text": filler_text(self.output_tokens),
            "tokens_in": tokens_in,
            "tokens_out": self.output_tokens,
        }


def serve(model: MockModel) -> int:
    busy_burn(model.load_s)
    print(json.dumps({"ready": True}), flush=True)
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        req = json.loads(line)
        resp = model.answer(req.get("prompt", ""), req.get("image") or None)
        resp["id"] = req.get("id")
        print(json.dumps(resp), flush=True)
    return 0


def oneshot(model: MockModel, args: argparse.Namespace) -> int:
    with open(args.prompt_file) as fh:
        prompt = fh.read()
    resp = model.answer(prompt, args.image or None, extra_cost_s=model.load_s)
    print(resp["text"])
    print(f"usage: tokens_in={resp['tokens_in']} tokens_out={resp['tokens_out']}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="mock-server", description=__doc__)
    parser.add_argument("--load-ms", type=float, default=0.0)
    parser.add_argument("--per-token-ms", type=float, default=0.0)
    parser.add_argument("--per-pixel-ns", type=float, default=0.0)
    parser.add_argument("--clamp", default="", help="WxH preprocessing bound")
    parser.add_argument("--output-tokens", type=int, default=32)
    parser.add_argument("--oneshot", action="store_true")
    parser.add_argument("--prompt-file", default="")
    parser.add_argument("--image", default="")
    args = parser.parse_args(argv)
    for name in ("load_ms", "per_token_ms", "per_pixel_ns", "output_tokens"):
        if getattr(args, name) < 0:
            parser.error(f"--{name.replace('_', '-')} must be nonnegative")

    model = MockModel(args)
    if args.oneshot:
        if not args.prompt_file:
            parser.error("--oneshot requires --prompt-file")
        return oneshot(model, args)
    return serve(model)


if __name__ == "__main__":
    sys.exit(main())
