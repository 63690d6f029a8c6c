"""Counterexample-guided loop: train, certify, enrich, repeat.

Each round trains (warm-started, fresh optimizer state), exports, and
certifies.  On DELTA_SAT, every witness plus 64 Gaussian-jittered neighbors
(std 5% of the ROI width per dimension, clipped to the ROI) joins the replay
buffer with 10x sampling weight before the next round.  The loop stops at the
first all-UNSAT certificate or after ``max_rounds``; running out of rounds is
a reported outcome (EXHAUSTED), not an error, since nothing guarantees the
process converges.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .certify import Certificate, CertifyOptions, certify_roi
from .config import ProblemSpec, SpecError
from .net import NetParams, ReplayBuffer, TrainSchedule, init, train

__all__ = ["CegisRound", "CegisReport", "run_cegis", "JITTER_NEIGHBORS", "JITTER_STD_FRACTION", "COUNTEREXAMPLE_WEIGHT"]

JITTER_NEIGHBORS = 64
JITTER_STD_FRACTION = 0.05
COUNTEREXAMPLE_WEIGHT = 10.0


@dataclass(frozen=True)
class CegisRound:
    index: int
    iterations: int
    statuses: dict
    bound: float | None
    eps_val: float | None
    counterexamples: np.ndarray  # witnesses fed back after this round, (k, dim)


@dataclass
class CegisReport:
    rounds: list
    final_status: str  # "CERTIFIED" | "EXHAUSTED"

    def to_json(self) -> dict:
        return {
            "final_status": self.final_status,
            "rounds": [
                {
                    "round": r.index,
                    "iterations": r.iterations,
                    "statuses": r.statuses,
                    "bound": r.bound,
                    "eps_val": r.eps_val,
                    "counterexamples": r.counterexamples.tolist(),
                }
                for r in self.rounds
            ],
        }

    def save(self, path: str | Path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=2, sort_keys=True)
            f.write("\n")

    def save_counterexamples_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            rows = [(r.index, *pt) for r in self.rounds for pt in r.counterexamples]
            dim = len(rows[0]) - 1 if rows else 2
            writer.writerow(["round"] + [f"x{i + 1}" for i in range(dim)])
            for row in rows:
                writer.writerow([row[0]] + [repr(float(c)) for c in row[1:]])


def _enrich(buffer: ReplayBuffer, witnesses: np.ndarray, spec: ProblemSpec, seed: int, round_index: int) -> None:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 3, round_index]))
    std = JITTER_STD_FRACTION * spec.roi.widths
    for w in witnesses:
        pts = np.concatenate([w[None, :], w[None, :] + rng.normal(0.0, std, size=(JITTER_NEIGHBORS, spec.state_dim))])
        buffer.add(pts, weight=COUNTEREXAMPLE_WEIGHT, roi=spec.roi)


def run_cegis(
    spec: ProblemSpec,
    route: str,
    rho: float,
    delta: float,
    max_rounds: int,
    schedule: TrainSchedule,
    refine_schedule: TrainSchedule | None = None,
    seed: int = 0,
    params: NetParams | None = None,
    cells_per_axis: int = 4,
    threads: int = 1,
    options: CertifyOptions | None = None,
):
    """Alternate training and certification; returns (params, certificate, report).

    ``schedule`` drives the first round; later rounds use ``refine_schedule``
    (default: a quarter of the iterations).  Deterministic given ``seed``.
    """
    if max_rounds < 1:
        raise SpecError(f"max_rounds must be >= 1, got {max_rounds}")
    if refine_schedule is None:
        refine_schedule = replace(schedule, iterations=max(1000, schedule.iterations // 4))
    if params is None:
        params = init(seed=seed, sizes=(spec.state_dim, 40, 40, 1))
    buffer = ReplayBuffer(capacity=schedule.buffer_size, seed=seed)
    buffer.fill_uniform(spec, schedule.buffer_size)

    rounds = []
    cert: Certificate | None = None
    for round_index in range(max_rounds):
        sched = schedule if round_index == 0 else refine_schedule
        params, _trace = train(params, spec, sched, buffer=buffer, seed=seed)
        cert = certify_roi(
            params, spec, route, rho, delta,
            cells_per_axis=cells_per_axis, threads=threads, options=options,
        )
        statuses = {}
        for v in cert.verdicts:
            statuses[v.status] = statuses.get(v.status, 0) + 1
        witnesses = cert.witnesses()
        rounds.append(
            CegisRound(
                index=round_index,
                iterations=sched.iterations,
                statuses=statuses,
                bound=cert.bound,
                eps_val=cert.eps_val,
                counterexamples=witnesses,
            )
        )
        if cert.all_unsat:
            return params, cert, CegisReport(rounds=rounds, final_status="CERTIFIED")
        if witnesses.size:
            _enrich(buffer, witnesses, spec, seed, round_index)
    return params, cert, CegisReport(rounds=rounds, final_status="EXHAUSTED")
