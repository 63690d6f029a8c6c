#!/usr/bin/env python3
"""Dump the pointwise stationary HJB residual of trained weights on a grid.

Produces a plot-ready CSV (x1, x2, w, r) and prints summary quantiles; handy
for eyeballing where a certification attempt will concentrate its effort
(switching curve, target band edge).
"""

import argparse
import csv
import sys

import numpy as np

from reachcert import grid, net
from reachcert.config import load_config
from reachcert.residuals import NetValueFn, residual_route_b_stationary


def run(args):
    spec = load_config(args.config or "double-integrator-paper")
    params = net.load_params(args.weights)
    field = grid.GridField.zeros((args.grid_shape, args.grid_shape), spec.roi)
    pts = grid.grid_points(field)
    w = net.forward(params, pts)
    r = residual_route_b_stationary(NetValueFn(params), pts, spec)
    with open(args.out, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["x1", "x2", "w", "r"])
        for row, wv, rv in zip(pts, w, r):
            writer.writerow([repr(float(c)) for c in row] + [repr(float(wv)), repr(float(rv))])
    q = np.quantile(np.abs(r), [0.5, 0.9, 0.99, 1.0])
    print(f"|residual| quantiles on {args.grid_shape}^2 grid: "
          f"p50={q[0]:.4f} p90={q[1]:.4f} p99={q[2]:.4f} max={q[3]:.4f}")
    return 0


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--weights", required=True)
    ap.add_argument("--config", default=None)
    ap.add_argument("--grid-shape", type=int, default=201)
    ap.add_argument("--out", default="residual_landscape.csv")
    sys.exit(run(ap.parse_args()))
