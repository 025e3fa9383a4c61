#!/usr/bin/env python3
"""Independent failure recount over an evolution-results JSONL file.

Deliberately standalone (stdlib only, no package imports) so it can serve
as an oracle for the in-package aggregation: walks every rollout record,
counts failures by cause with protocol-cause failures folded into
solvability, and prints per-seed averages as JSON.

Usage: python3 scripts/recount_failures.py path/to/evolution_results.jsonl
"""

import json
import sys


def main() -> int:
    if len(sys.argv) != 2:
        print(__doc__.strip(), file=sys.stderr)
        return 2
    solvability = 0
    difficulty = 0
    n = 0
    with open(sys.argv[1], encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            record = json.loads(line)
            n += 1
            for rollout in record["rollouts"]:
                failure = rollout.get("failure")
                if failure is None:
                    continue
                if failure["kind"] == "DIFFICULTY":
                    difficulty += 1
                else:  # SOLVABILITY or PROTOCOL
                    solvability += 1
    if n == 0:
        print("no records", file=sys.stderr)
        return 2
    out = {
        "n_seeds": n,
        "avg_total": round((solvability + difficulty) / n, 2),
        "avg_solvability": round(solvability / n, 2),
        "avg_difficulty": round(difficulty / n, 2),
    }
    print(json.dumps(out, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
