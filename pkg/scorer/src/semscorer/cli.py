"""Line-delimited JSON worker.

Reads one request per stdin line: ``{"id": ..., "candidate": "...",
"reference": "..."}``; writes one response per stdout line: ``{"id": ...,
"score": 0.xx, "degenerate": bool}``. ``--info`` prints the embedding
variant and exits, so clients can record which scorer produced a batch.
A nonzero exit signals the caller that this scorer is unavailable.

Exit codes: 0 success; 2 malformed input line; 3 embedder unavailable.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .embedding import load_embedder
from .scoring import score_similarity


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="semscorer", description=__doc__)
    parser.add_argument(
        "--model",
        default=os.environ.get("SEMSCORER_MODEL", ""),
        help="sentence-embedding model name/path (default: built-in hashed n-grams)",
    )
    parser.add_argument(
        "--info", action="store_true", help="print the scorer identity and exit"
    )
    args = parser.parse_args(argv)

    try:
        embedder = load_embedder(args.model or None)
    except Exception as exc:  # model missing, import failure: unavailable
        print(f"semscorer: cannot load embedder: {exc}", file=sys.stderr)
        return 3

    if args.info:
        print(json.dumps({"variant": embedder.variant}))
        return 0

    for lineno, line in enumerate(sys.stdin, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            req = json.loads(line)
            candidate = str(req["candidate"])
            reference = str(req["reference"])
            req_id = req.get("id")
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            print(f"semscorer: bad request on line {lineno}: {exc}", file=sys.stderr)
            return 2
        score, degenerate = score_similarity(embedder, candidate, reference)
        print(
            json.dumps({"id": req_id, "score": round(score, 6), "degenerate": degenerate}),
            flush=True,
        )
    return 0


if __name__ == "__main__":
    sys.exit(main())
