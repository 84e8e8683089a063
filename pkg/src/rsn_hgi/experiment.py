"""Replication fan-out over the r grid, aggregation and persistence."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .cost import HhatVertices
from .estimators import (CostEstimate, discount_truncation_bound, discounted_cost, ergodic_cost,
                         idleness_metric, mean_gap)
from .kernel import PolicyTables, synthesize
from .model import NetworkSpec, StructuralError, make_instance, validate
from .rbm import RbmConfig, diffusion_coefficients, hgi_discounted, hgi_ergodic
from .simengine import InitialCondition, SimConfig, run

__all__ = ["ResultTable", "run_experiment", "replication_seed", "ROWS_SCHEMA", "SUMMARY_SCHEMA"]

log = logging.getLogger(__name__)

ROWS_SCHEMA = "rsn-hgi-rows/1"
SUMMARY_SCHEMA = "rsn-hgi-summary/1"


def replication_seed(seed: int, replication: int) -> int:
    """Seed of a replication; independent of r so runs share random numbers."""
    return int(np.random.SeedSequence(int(seed), spawn_key=(int(replication),)).generate_state(1, np.uint64)[0])


@dataclass
class ResultTable:
    """Long-format rows ``(r, replication, metric, value)`` plus references."""

    rows: list = field(default_factory=list)
    hgi: dict = field(default_factory=dict)
    runtime: dict = field(default_factory=dict)

    def add(self, r: float, rep: int, metric: str, value: float) -> None:
        self.rows.append((float(r), int(rep), metric, float(value)))

    def sorted_rows(self) -> list:
        return sorted(self.rows, key=lambda x: (x[0], x[1], x[2]))

    @property
    def metrics(self) -> list[str]:
        return sorted({m for _, _, m, _ in self.rows})

    @property
    def r_values(self) -> list[float]:
        return sorted({r for r, _, _, _ in self.rows})

    def values(self, r: float, metric: str) -> np.ndarray:
        return np.array([v for rr, _, m, v in self.sorted_rows() if rr == r and m == metric])

    def aggregates(self) -> list[dict]:
        out = []
        for r in self.r_values:
            for m in self.metrics:
                v = self.values(r, m)
                if v.size == 0:
                    continue
                se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
                out.append({"r": r, "metric": m, "mean": float(v.mean()), "std_error": se, "n": int(v.size)})
        return out

    def mean(self, r: float, metric: str) -> float:
        return float(self.values(r, metric).mean())

    def __len__(self) -> int:
        return len(self.rows)

    def write_csv(self, out_dir) -> list[Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        p_rows = out_dir / "rows.csv"
        with open(p_rows, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["r", "replication", "metric", "value"])
            for r, rep, m, v in self.sorted_rows():
                w.writerow([repr(r), rep, m, repr(v)])
        p_agg = out_dir / "aggregates.csv"
        with open(p_agg, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["r", "metric", "mean", "std_error", "n"])
            for a in self.aggregates():
                w.writerow([repr(a["r"]), a["metric"], repr(a["mean"]), repr(a["std_error"]), a["n"]])
        return [p_rows, p_agg]


def _trend_verdict(table: ResultTable, metric: str, spec_I: int) -> dict:
    rs = table.r_values
    if len(rs) < 2 or not table.hgi:
        return {}
    lo, hi = rs[0], rs[-1]
    ref = table.hgi["value"]
    gap_lo = abs(table.mean(lo, metric) - ref)
    gap_hi = abs(table.mean(hi, metric) - ref)
    out = {
        "abs_gap_to_hgi": {"r_min": gap_lo, "r_max": gap_hi, "pass": gap_hi < gap_lo},
    }
    if "mean_gap" in table.metrics:
        g_lo, g_hi = table.mean(lo, "mean_gap"), table.mean(hi, "mean_gap")
        out["mean_instantaneous_gap"] = {"r_min": g_lo, "r_max": g_hi, "pass": g_hi < 0.5 * g_lo}
    idle = {}
    for i in range(spec_I):
        m = f"idle_{i + 1}"
        if m in table.metrics:
            idle[m] = {"r_min": table.mean(lo, m), "r_max": table.mean(hi, m),
                       "pass": table.mean(hi, m) < table.mean(lo, m)}
    if idle:
        out["idleness"] = idle
        out["idleness_pass"] = all(v["pass"] for v in idle.values())
    checks = [out["abs_gap_to_hgi"]["pass"]]
    if "mean_instantaneous_gap" in out:
        checks.append(out["mean_instantaneous_gap"]["pass"])
    out["verdict"] = "PASS" if all(checks) else "FAIL"
    return out


@dataclass(frozen=True)
class _Task:
    spec: NetworkSpec
    tables: PolicyTables
    arrival: tuple
    service: tuple
    r: float
    rep: int
    seed: int
    c1: float
    c2: float
    kappa: float
    T: float
    q0: tuple | None
    varsigma: float | None


def _run_task(task: _Task) -> tuple[float, int, dict, float]:
    start = time.perf_counter()
    inst = make_instance(task.spec, task.r)
    init = InitialCondition(np.array(task.q0 if task.q0 is not None else [0] * task.spec.J))
    cfg = SimConfig(inst, task.tables, task.c1, task.c2, task.kappa, task.T * task.r**2,
                    seed=task.seed, init=init, arrival=task.arrival, service=task.service)
    traj = run(cfg)
    out = {}
    if task.varsigma is None:
        out["J_E"] = ergodic_cost(traj, task.T)
        out["mean_gap"] = mean_gap(traj, task.T)
    else:
        out["J_D"] = discounted_cost(traj, task.varsigma)
        out["truncation_bound"] = discount_truncation_bound(traj, task.varsigma)
    for i, v in enumerate(idleness_metric(traj, fraction=True)):
        out[f"idle_{i + 1}"] = float(v)
    out["events"] = float(traj.n_arrivals.sum() + traj.n_departures.sum())
    return task.r, task.rep, out, time.perf_counter() - start


def discount_horizon(cfg: ExperimentConfig) -> float:
    """Scaled horizon after which exp(-varsigma t) is below ``discount_tol`` with room to spare."""
    return max(cfg.T, (math.log(1.0 / cfg.discount_tol) + 10.0) / cfg.varsigma)


def hgi_reference(cfg: ExperimentConfig, spec: NetworkSpec, discounted: bool = False) -> CostEstimate:
    """Monte Carlo HGI benchmark from the limiting workload w0 = 0.

    A fixed unscaled initial queue scales to zero, so the limit starts empty.
    """
    theta, Sigma = diffusion_coefficients(spec)
    w0 = np.zeros(spec.I)
    hp = cfg.hgi
    hv = HhatVertices(spec)
    if discounted:
        rc = RbmConfig(w0, theta, Sigma, dt=hp.dt, T=discount_horizon(cfg), seed=cfg.seed)
        return hgi_discounted(rc, cfg.varsigma, hv, hp.replications)
    rc = RbmConfig(w0, theta, Sigma, dt=hp.dt, T=hp.T, seed=cfg.seed)
    return hgi_ergodic(rc, hv, hp.replications, hp.burn_in)


def _write_summary(out_dir: Path, cfg: ExperimentConfig, table: ResultTable, extra: dict) -> Path:
    summary = {
        "schema": SUMMARY_SCHEMA,
        "created": datetime.now(timezone.utc).isoformat(),
        "config": cfg.echo(),
        "hgi_reference": table.hgi,
        "aggregates": table.aggregates(),
        "runtime_seconds": table.runtime,
    }
    summary.update(extra)
    p = out_dir / "summary.json"
    with open(p, "w") as f:
        json.dump(summary, f, indent=1, default=float)
    return p


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> tuple[ResultTable, dict]:
    """Run the configured mode and persist rows, aggregates and a JSON summary.

    Returns the table and the summary extras (verdicts). Raises
    :class:`StructuralError` when the network fails validation.
    """
    out_dir = Path(out_dir or cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    spec = cfg.network_spec()
    report = validate(spec)
    if not report.ok:
        raise StructuralError(report.render())
    table = ResultTable()
    t0 = time.perf_counter()

    if cfg.mode == "hgi-only":
        est = hgi_reference(cfg, spec)
        table.hgi = {"kind": "ergodic", "value": est.value, "std_error": est.std_error,
                     "replications": est.replications}
        table.runtime["total"] = time.perf_counter() - t0
        _write_summary(out_dir, cfg, table, {})
        return table, {}

    discounted = cfg.mode == "converge-discounted"
    tables = synthesize(spec)
    arrival, service = cfg.families(spec.J)
    grid = cfg.r_grid[:1] if cfg.mode == "single-run" else cfg.r_grid
    reps = 1 if cfg.mode == "single-run" else cfg.replications
    T = cfg.T
    if discounted:
        T = discount_horizon(cfg)
    tasks = [_Task(spec, tables, tuple(arrival), tuple(service), r, rep, replication_seed(cfg.seed, rep),
                   cfg.policy.c1, cfg.policy.c2, cfg.policy.kappa, T, cfg.q0,
                   cfg.varsigma if discounted else None)
             for r in grid for rep in range(reps)]

    if cfg.mode == "single-run":
        task = tasks[0]
        inst = make_instance(spec, task.r)
        init = InitialCondition(np.array(cfg.q0 if cfg.q0 is not None else [0] * spec.J))
        scfg = SimConfig(inst, tables, task.c1, task.c2, task.kappa, T * task.r**2, seed=task.seed,
                         init=init, arrival=task.arrival, service=task.service)
        traj = run(scfg)
        traj.to_csv(out_dir / "trajectory.csv")

    results = []
    try:
        if cfg.jobs > 1:
            with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
                for res in pool.map(_run_task, tasks):
                    results.append(res)
        else:
            for task in tasks:
                results.append(_run_task(task))
                log.info("r=%g rep=%d done", task.r, task.rep)
    except KeyboardInterrupt:
        _collect(table, results)
        table.write_csv(out_dir)
        _write_summary(out_dir, cfg, table, {"interrupted": True})
        raise
    _collect(table, results)

    if not discounted:
        est = hgi_reference(cfg, spec)
        table.hgi = {"kind": "ergodic", "value": est.value, "std_error": est.std_error,
                     "replications": est.replications}
        metric = "J_E"
    else:
        est = hgi_reference(cfg, spec, discounted=True)
        table.hgi = {"kind": "discounted", "value": est.value, "std_error": est.std_error,
                     "replications": est.replications, "truncation_bound": est.truncation_bound}
        metric = "J_D"
    table.runtime["total"] = time.perf_counter() - t0
    table.write_csv(out_dir)
    extra = {"trend": _trend_verdict(table, metric, spec.I)}
    _write_summary(out_dir, cfg, table, extra)
    return table, extra


def _collect(table: ResultTable, results) -> None:
    for r, rep, metrics, secs in sorted(results, key=lambda x: (x[0], x[1])):
        for m, v in metrics.items():
            table.add(r, rep, m, v)
        table.runtime[f"r={r:g},rep={rep}"] = secs
