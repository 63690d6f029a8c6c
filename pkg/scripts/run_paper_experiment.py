#!/usr/bin/env python3
"""End-to-end desk-scale experiment on the double-integrator preset.

Trains the value network, certifies the stationary HJB residual over the ROI,
cross-checks against the grid oracle, and writes reach-set enclosures; all
artifacts plus manifests land in --out-dir.  Exit code 0 means the run is
fully certified.

This is a convenience wrapper over the CLI:
    reachcert train / certify / compare / bracket
"""

import argparse
import sys
from pathlib import Path

from reachcert.cli import main as cli


def run(args):
    out = Path(args.out_dir)
    base = ["--preset", "double-integrator-paper", "--threads", str(args.threads)]
    steps = [
        ["train", *base, "--out-dir", str(out / "train"), "--seed", str(args.seed)]
        + (["--paper-scale"] if args.paper_scale else []),
        ["export-expr", "--weights", str(out / "train" / "weights.json"), "--out-dir", str(out / "expr")],
        [
            "certify", *base, "--out-dir", str(out / "certify"),
            "--weights", str(out / "train" / "weights.json"),
            "--route", "b", "--rho", str(args.rho), "--delta", str(args.delta),
            "--cells", "4", "--emit", "smt2",
        ],
        [
            "compare", *base, "--out-dir", str(out / "compare"),
            "--weights", str(out / "train" / "weights.json"), "--grid-shape", "201",
        ],
        [
            "bracket", *base, "--out-dir", str(out / "bracket"),
            "--weights", str(out / "train" / "weights.json"),
            "--certificate", str(out / "certify" / "certificate.json"),
            "--grid-shape", "201",
        ],
    ]
    for step in steps:
        print(f"== reachcert {' '.join(step)}", flush=True)
        code = cli(step)
        if code != 0:
            print(f"step failed with exit code {code}", file=sys.stderr)
            return code
    print("experiment complete: certificate, comparison and enclosures written")
    return 0


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", default="runs/paper-desk")
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--rho", type=float, default=0.1)
    ap.add_argument("--delta", type=float, default=1e-8)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--paper-scale", action="store_true", help="full-scale training table instead of desk scale")
    sys.exit(run(ap.parse_args()))
