"""Reference oracle process for the line-delimited JSON protocol.

Run as ``python -m graphshap.reference_child [--model or] [--n-features N]``.
It answers each ``{"instances": ...}`` line with ``{"probs": ...}``.
"""

import argparse
import json
import sys


def or_gate(row):
    one = 1.0 if any(v != 0 for v in row) else 0.0
    return [1.0 - one, one]


def main(argv=None):
    parser = argparse.ArgumentParser()
    parser.add_argument("--model", choices=["or", "bad-shape"], default="or")
    parser.add_argument("--n-features", type=int, default=2)
    args = parser.parse_args(argv)

    out = sys.stdout
    out.write(json.dumps({"n_features": args.n_features, "n_classes": 2}) + "\n")
    out.flush()
    for line in sys.stdin:
        if not line.strip():
            continue
        rows = json.loads(line)["instances"]
        if args.model == "bad-shape":
            probs = [[0.5, 0.25, 0.25] for _ in rows]
        else:
            probs = [or_gate(r) for r in rows]
        out.write(json.dumps({"probs": probs}) + "\n")
        out.flush()


if __name__ == "__main__":
    main()
