"""Diffusion-scaled views of trajectories and the cost functionals.

All times below are scaled: a segment ``[t1, t2)`` of the r-th system's own
clock maps to ``[t1 / r**2, t2 / r**2)``. Integrals are exact because every
scaled process is piecewise constant (or piecewise linear, for B and U).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .cost import HhatVertices
from .simengine import Trajectory

__all__ = [
    "ScaledView",
    "CostEstimate",
    "discounted_cost",
    "discount_truncation_bound",
    "ergodic_cost",
    "hgi_gap_series",
    "mean_gap",
    "idleness_metric",
    "summarize",
    "write_estimates_csv",
]


class ScaledView:
    """Diffusion-scaled processes evaluated at segment boundaries.

    Arrays indexed by segment hold the constant value on that segment; arrays
    with one extra row hold values at ``t[0], ..., t[n]``.
    """

    def __init__(self, traj: Trajectory):
        self.traj = traj
        inst = traj.cfg.instance
        self.instance = inst
        self.r = float(inst.r)
        r2 = self.r**2
        self.t = traj.times / r2
        self.Q = traj.q / self.r
        self.W = self.Q @ inst.KM_r.T
        self.w0 = inst.KM_r @ (traj.q0 / self.r)
        self.B = traj.B_at_starts() / r2

    @property
    def durations(self) -> np.ndarray:
        return np.diff(self.t)

    @property
    def horizon(self) -> float:
        return float(self.t[-1])

    @property
    def U(self) -> np.ndarray:
        """Scaled unused capacity ``r (C t - K B)`` at segment boundaries."""
        spec = self.instance.spec
        return self.r * (self.t[:, None] * spec.C[None, :] - self.B @ spec.K.T)

    @property
    def W_boundaries(self) -> np.ndarray:
        """Workload at boundaries: the value just after each event."""
        Q = np.vstack([self.Q, self.traj.q_end[None, :] / self.r])
        return Q @ self.instance.KM_r.T

    def X(self) -> np.ndarray:
        """Netput process rebuilt from arrival and departure counts.

        Together with ``U`` this satisfies ``W = w0 + X + U`` at every
        boundary; checking that identity exercises the bookkeeping of
        cumulative allocation against event counts.
        """
        traj = self.traj
        inst = self.instance
        spec = inst.spec
        r = self.r
        cfg = traj.cfg
        arr, dep = traj.event_counts()
        t = self.t[:, None]
        B = self.B
        ua = cfg.init.residual_arrival[None, :] / r**2
        us = cfg.init.residual_service[None, :] / r**2
        KMr = inst.KM_r
        core = ((arr - dep) / r - r * np.maximum(t - ua, 0.0) * inst.alpha_r
                + r * np.maximum(B - us, 0.0) * inst.beta_r)
        return (core @ KMr.T
                + r * t * (spec.K @ (inst.rho_r - spec.rho))[None, :]
                - r * np.minimum(t, ua) @ (spec.K * inst.rho_r[None, :]).T
                + r * np.minimum(B, us) @ spec.K.T)


@dataclass(frozen=True)
class CostEstimate:
    value: float
    std_error: float
    replications: int
    horizon: float
    truncation_bound: float = 0.0

    def __post_init__(self):
        if not self.std_error >= 0:
            raise ValueError("std_error must be nonnegative")


def _holding(traj: Trajectory, view: ScaledView | None = None) -> np.ndarray:
    view = view or ScaledView(traj)
    return view.Q @ traj.cfg.instance.spec.h


def discounted_cost(traj: Trajectory, varsigma: float, tol: float | None = None) -> float:
    """Exact ``int_0^T exp(-varsigma t) h.Q(t) dt`` over the recorded path.

    If ``tol`` is given, the path must be long enough that the neglected tail
    (see :func:`discount_truncation_bound`) is at most ``tol``.
    """
    if not varsigma > 0:
        raise ValueError("discount rate must be positive")
    view = ScaledView(traj)
    if tol is not None:
        bound = discount_truncation_bound(traj, varsigma, view)
        if bound > tol:
            raise ValueError(f"horizon too short: truncation bound {bound:.3g} > {tol:.3g}")
    hq = _holding(traj, view)
    e = np.exp(-varsigma * view.t)
    return float(hq @ (e[:-1] - e[1:]) / varsigma)


def discount_truncation_bound(traj: Trajectory, varsigma: float, view: ScaledView | None = None) -> float:
    """Tail estimate ``exp(-varsigma T) max_t h.Q(t) / varsigma``.

    This is exact for a path that stays at its running maximum; for a
    random path it is the heuristic tail used to pick horizons.
    """
    if not varsigma > 0:
        raise ValueError("discount rate must be positive")
    view = view or ScaledView(traj)
    hq = _holding(traj, view)
    hmax = float(max(hq.max(initial=0.0), traj.cfg.instance.spec.h @ traj.q_end / view.r))
    return math.exp(-varsigma * view.horizon) * hmax / varsigma


def _time_average(values: np.ndarray, view: ScaledView, T: float | None) -> float:
    if T is None:
        T = view.horizon
    if not T > 0:
        raise ValueError("averaging horizon must be positive")
    if view.horizon < T * (1 - 1e-12):
        raise ValueError(f"path covers [0, {view.horizon:.6g}] but T={T:.6g} was requested")
    dur = np.clip(np.minimum(view.t[1:], T) - view.t[:-1], 0.0, None)
    return float(values @ dur / T)


def ergodic_cost(traj: Trajectory, T: float | None = None) -> float:
    """Exact ``(1/T) int_0^T h.Q(t) dt``; ``T`` defaults to the full path."""
    view = ScaledView(traj)
    return _time_average(_holding(traj, view), view, T)


def hgi_gap_series(traj: Trajectory, hhat: HhatVertices | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Per-segment ``h.Q - hhat(W)`` with ``hhat`` built for the finite-r rates.

    Returns ``(t_start, gap)``. Using ``beta^r`` in ``hhat`` keeps the gap
    nonnegative up to rounding.
    """
    view = ScaledView(traj)
    inst = view.instance
    if hhat is None:
        hhat = HhatVertices(inst.spec, beta=inst.beta_r)
    gap = _holding(traj, view) - hhat(view.W) if view.W.shape[0] else np.zeros(0)
    return view.t[:-1], gap


def mean_gap(traj: Trajectory, T: float | None = None, hhat: HhatVertices | None = None) -> float:
    """Time average of :func:`hgi_gap_series`."""
    view = ScaledView(traj)
    _, gap = hgi_gap_series(traj, hhat)
    return _time_average(gap, view, T)


def idleness_metric(traj: Trajectory, fraction: bool = False, tol: float = 1e-12) -> np.ndarray:
    """Scaled time each resource spends below capacity despite high workload.

    A segment counts for resource i when ``W_i >= 2 J c2 r^(kappa-1)`` and
    ``(K b)_i < C_i``. With ``fraction=True`` the result is divided by the
    horizon.
    """
    view = ScaledView(traj)
    cfg = traj.cfg
    spec = cfg.instance.spec
    level = 2 * spec.J * cfg.c2 * view.r ** (cfg.kappa - 1)
    under = (traj.b @ spec.K.T) < spec.C[None, :] - tol
    mask = (view.W >= level) & under
    out = view.durations @ mask.astype(float)
    if fraction:
        out = out / view.horizon if view.horizon > 0 else np.zeros_like(out)
    return np.asarray(out, dtype=float).reshape(spec.I)


def summarize(values: Iterable[float], horizon: float, truncation_bound: float = 0.0) -> CostEstimate:
    """Replication mean with the standard error of the mean."""
    v = np.asarray(list(values), dtype=float)
    n = v.size
    if n == 0:
        raise ValueError("no replications")
    se = float(v.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return CostEstimate(float(v.mean()), se, n, horizon, truncation_bound)


def write_estimates_csv(path, rows: Iterable[tuple[float, int, str, float]]) -> None:
    """Rows ``(r, replication, metric, value)``, sorted by key."""
    rows = sorted(rows, key=lambda x: (x[0], x[1], x[2]))
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["r", "replication", "metric", "value"])
        for r, rep, metric, value in rows:
            w.writerow([repr(float(r)), int(rep), metric, repr(float(value))])
