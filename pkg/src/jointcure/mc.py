"""Monte Carlo experiment driver: simulate -> fit -> bias/coverage, repeated.

Replicates run in a process pool with per-replicate seed streams spawned
from the root seed, so results are independent of scheduling order and
reproduce bit-for-bit from the root seed alone.  Individual replicate
failures are counted and reported, never fatal.
"""

from __future__ import annotations

import csv
import sys
import time
from dataclasses import dataclass
from multiprocessing import get_context

import numpy as np

from .inference import FitConfig, InlaEngine, PriorSpec
from .model import JointDataset
from .simulate import SCENARIOS, SCENARIO_PARAM_NAMES, scenario_truth, simulate_dataset

# canonical scenario parameter -> summary-table name
CANONICAL_TO_SUMMARY = {
    "alpha": "alpha",
    "gamma0": "gamma0",
    "gamma01": "gamma_y_intercept",
    "gamma11": "gamma_y_time",
    "psi1": "psi_x1",
    "beta0": "beta_y_intercept",
    "beta1": "beta_y_time",
    "beta2": "beta_y_x1",
    "beta3": "beta_y_x2",
    "sigma_b0": "sigma_y_intercept",
    "sigma_b1": "sigma_y_time",
    "rho": "rho_y.intercept_y.time",
}


@dataclass(frozen=True)
class McRow:
    parameter: str
    true_value: float
    avg_bias: float
    coverage: float


@dataclass(frozen=True)
class McReport:
    """Aggregated bias and 95%-interval coverage, Tables-1/2 shaped."""

    scenario_id: str
    n_subjects: int
    replicates: int
    n_failed: int
    rows: tuple
    runtime: float

    def row(self, parameter: str) -> McRow:
        for r in self.rows:
            if r.parameter == parameter:
                return r
        raise KeyError(parameter)


def replicate_seeds(seed: int, replicates: int) -> np.ndarray:
    """Deterministic (replicates, 2) int seeds: (dataset seed, draw seed)."""
    state = np.random.SeedSequence(seed).generate_state(2 * replicates, dtype=np.uint32)
    return state.reshape(replicates, 2).astype(np.int64)


def run_replicate(task):
    """One simulate -> fit -> score pass; returns (idx, bias, cover, error)."""
    idx, scenario, n, data_seed, draw_seed, fit_kwargs = task
    try:
        cfg = SCENARIOS[scenario](n=n, seed=int(data_seed))
        sim = simulate_dataset(cfg)
        data = JointDataset(subjects=sim.subjects, spec=cfg.spec)
        engine = InlaEngine(data, priors=PriorSpec(), config=FitConfig(**fit_kwargs))
        rng = np.random.default_rng(np.random.SeedSequence(int(draw_seed)))
        result = engine.fit(rng=rng)
        truth = scenario_truth(cfg)
        bias = {}
        cover = {}
        for canon, full in CANONICAL_TO_SUMMARY.items():
            p = result.summary.parameter(full)
            bias[canon] = p.mean - truth[canon]
            cover[canon] = 1.0 if p.q025 <= truth[canon] <= p.q975 else 0.0
        return idx, bias, cover, None
    except Exception as e:  # never abort the sweep
        return idx, None, None, f"{type(e).__name__}: {e}"


def run_mc(
    scenario: str,
    n: int,
    replicates: int,
    seed: int = 0,
    parallelism: int = 1,
    fit_kwargs: dict | None = None,
    progress: bool = False,
) -> McReport:
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}; choose from {sorted(SCENARIOS)}")
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    seeds = replicate_seeds(seed, replicates)
    fit_kwargs = fit_kwargs or {}
    tasks = [
        (i, scenario, n, seeds[i, 0], seeds[i, 1], fit_kwargs)
        for i in range(replicates)
    ]

    t0 = time.perf_counter()
    results = []
    if parallelism > 1:
        with get_context("fork").Pool(processes=parallelism) as pool:
            for out in pool.imap_unordered(run_replicate, tasks):
                results.append(out)
                if progress:
                    print(f"replicate {out[0]} done ({len(results)}/{replicates})", file=sys.stderr)
    else:
        for task in tasks:
            out = run_replicate(task)
            results.append(out)
            if progress:
                print(f"replicate {out[0]} done ({len(results)}/{replicates})", file=sys.stderr)
    runtime = time.perf_counter() - t0

    results.sort(key=lambda r: r[0])
    failures = [(idx, err) for idx, _, _, err in results if err is not None]
    for idx, err in failures:
        print(f"replicate {idx} failed: {err}", file=sys.stderr)
    ok = [(b, c) for _, b, c, err in results if err is None]
    if not ok:
        raise RuntimeError(f"all {replicates} replicates failed; first error: {failures[0][1]}")

    truth = scenario_truth(SCENARIOS[scenario](n=n, seed=0))
    rows = []
    for canon in SCENARIO_PARAM_NAMES:
        biases = np.array([b[canon] for b, _ in ok])
        covers = np.array([c[canon] for _, c in ok])
        rows.append(
            McRow(
                parameter=canon,
                true_value=truth[canon],
                avg_bias=float(biases.mean()),
                coverage=float(covers.mean()),
            )
        )
    return McReport(
        scenario_id=scenario,
        n_subjects=n,
        replicates=replicates,
        n_failed=len(failures),
        rows=tuple(rows),
        runtime=runtime,
    )


def write_mc_report(report: McReport, path) -> None:
    """Emit the Tables-1/2-shaped CSV (no wall-clock column: reruns must be
    bit-identical)."""
    from .io import fmt6

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["scenario", "n_subjects", "replicates", "n_failed", "parameter", "true_value", "avg_bias", "coverage"]
        )
        for r in report.rows:
            writer.writerow(
                [report.scenario_id, report.n_subjects, report.replicates, report.n_failed,
                 r.parameter, fmt6(r.true_value), fmt6(r.avg_bias), fmt6(r.coverage)]
            )
