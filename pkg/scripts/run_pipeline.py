"""Run the full desk pipeline for several root seeds and tabulate mean UAs.

    python scripts/run_pipeline.py --root /tmp/runs --seeds 0 1 2 3 4
"""

import argparse
import csv
import json
import sys
import time
from pathlib import Path

from sernas.harness.cli import main as cli


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--root", required=True)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.add_argument("--profile", default="desk")
    args = p.parse_args(argv)
    root = Path(args.root)
    rows = []
    for seed in args.seeds:
        ws = root / f"seed{seed}"
        start = time.perf_counter()
        code = cli(["run", "--workspace", str(ws), "--profile", args.profile, "--seed", str(seed)])
        if code:
            return code
        with open(ws / "reports" / "ua_table.csv") as fh:
            mean = [r for r in csv.DictReader(fh) if r["fold"] == "mean"][0]
        rows.append({"seed": seed, "minutes": round((time.perf_counter() - start) / 60, 2), **{k: float(v) for k, v in mean.items() if k.endswith("_ua")}})
        print(json.dumps(rows[-1]), file=sys.stderr)
    with open(root / "seeds.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
