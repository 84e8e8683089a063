"""Event-driven simulation of the controlled network.

Between events the queue vector, excursion flags and allocation are constant,
so trajectories are stored as exact piecewise-constant segments. Time here
is unscaled (the r-th system's own clock).
"""

from __future__ import annotations

import copy
import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _fastloop
from .distributions import ARRIVAL, EXPONENTIAL, SERVICE, DistributionSpec, VariateStreams, check_families
from .kernel import PolicyTables, z_index
from .model import TrafficInstance

__all__ = [
    "InvariantViolation",
    "InitialCondition",
    "SimConfig",
    "SimState",
    "Trajectory",
    "policy_rate",
    "initial_state",
    "step",
    "run",
    "run_python",
    "run_baseline",
    "EVENT_NAMES",
]

ARRIVAL_EV, DEPARTURE_EV, END_EV = _fastloop.ARRIVAL_EV, _fastloop.DEPARTURE_EV, _fastloop.END_EV
EVENT_NAMES = {ARRIVAL_EV: "arrival", DEPARTURE_EV: "departure", END_EV: "end"}
CAPACITY_TOL = 1e-12


class InvariantViolation(RuntimeError):
    """A safety property of the policy failed; the run cannot continue."""


@dataclass(frozen=True, eq=False)
class InitialCondition:
    """Queue lengths, residual times and (optionally) excursion flags at t=0.

    When ``e0`` is omitted it is derived from the lower threshold. Supplying
    ``e0[j] = 1`` requires ``q0[j]`` to be below the upper threshold.
    """

    q0: np.ndarray
    residual_arrival: np.ndarray | None = None
    residual_service: np.ndarray | None = None
    e0: np.ndarray | None = None

    def __post_init__(self):
        q0 = np.asarray(self.q0)
        if (q0 < 0).any() or not np.all(q0 == np.round(q0)):
            raise ValueError("q0 must be a nonnegative integer vector")
        object.__setattr__(self, "q0", q0.astype(np.int64))
        J = q0.shape[0]
        for name in ("residual_arrival", "residual_service"):
            v = getattr(self, name)
            v = np.zeros(J) if v is None else np.asarray(v, dtype=float)
            if v.shape != (J,) or (v < 0).any():
                raise ValueError(f"{name} must be a nonnegative length-{J} vector")
            object.__setattr__(self, name, v)
        if self.e0 is not None:
            e0 = np.asarray(self.e0, dtype=np.int8)
            if e0.shape != (J,) or not np.isin(e0, (0, 1)).all():
                raise ValueError("e0 must be a 0/1 vector")
            object.__setattr__(self, "e0", e0)
        if ((self.residual_service > 0) & (self.q0 == 0)).any():
            raise ValueError("a residual service time needs a job in the queue")

    @classmethod
    def empty(cls, J: int) -> "InitialCondition":
        return cls(np.zeros(J, dtype=np.int64))


@dataclass(frozen=True, eq=False)
class SimConfig:
    instance: TrafficInstance
    policy: PolicyTables
    c1: float
    c2: float
    kappa: float
    horizon: float
    seed: int = 0
    init: InitialCondition | None = None
    arrival: Sequence[DistributionSpec] | None = None
    service: Sequence[DistributionSpec] | None = None

    def __post_init__(self):
        spec = self.instance.spec
        J = spec.J
        if self.init is None:
            object.__setattr__(self, "init", InitialCondition.empty(J))
        if self.arrival is None:
            object.__setattr__(self, "arrival", (EXPONENTIAL,) * J)
        if self.service is None:
            object.__setattr__(self, "service", (EXPONENTIAL,) * J)
        if self.init.q0.shape != (J,):
            raise ValueError(f"initial queue must have length {J}")
        if not self.c1 < self.c2:
            raise ValueError("need c1 < c2")
        if not self.c1 > 0:
            raise ValueError("need c1 > 0 so that empty queues are never served")
        if not 0 < self.kappa < 0.25:
            raise ValueError("need 0 < kappa < 1/4")
        if not self.horizon >= 0:
            raise ValueError("horizon must be nonnegative")
        if not (self.hi - self.lo) > 1:
            raise ValueError(f"thresholds too close at r={self.instance.r}: "
                             f"(c2~ - c1~) r^kappa = {self.hi - self.lo:.4g} must exceed 1")
        dev = np.abs(self.instance.rho_r - spec.rho)
        if not (dev < spec.rho_star / 4).all():
            raise ValueError(f"r={self.instance.r} too small: |rho^r - rho| must be < rho*/4 "
                             f"componentwise (max deviation {dev.max():.4g}, rho*/4={spec.rho_star / 4:.4g})")
        bad = check_families(spec, self.arrival, self.service, self.instance)
        if bad:
            raise ValueError("; ".join(v.message for v in bad))
        e0 = self.init.e0
        if e0 is not None and ((e0 == 1) & (self.init.q0 >= self.hi)).any():
            raise ValueError("an excursion in progress needs q0 below the upper threshold")
        tab = self.allocation_table
        over = spec.K @ tab.T - spec.C[:, None]
        if (over > CAPACITY_TOL).any() or (tab < 0).any():
            raise InvariantViolation("policy tables allocate beyond capacity or negatively")

    @property
    def scale(self) -> float:
        return self.instance.r ** self.kappa

    @property
    def lo(self) -> float:
        """Queue level below which service of a class stops."""
        return float(self.instance.spec.beta.min() * self.c1 * self.scale)

    @property
    def hi(self) -> float:
        """Queue level marking a class as near empty / ending an excursion."""
        return float(self.instance.spec.beta.min() * self.c2 * self.scale)

    @property
    def allocation_table(self) -> np.ndarray:
        return self.policy.allocation_table(self.instance.spec.rho)

    def replace(self, **changes) -> "SimConfig":
        kw = {name: getattr(self, name) for name in self.__dataclass_fields__}
        kw.update(changes)
        return SimConfig(**kw)


def policy_rate(q, e, cfg: SimConfig) -> np.ndarray:
    """Allocation for queue state ``q`` and excursion flags ``e``."""
    q = np.asarray(q)
    e = np.asarray(e)
    spec = cfg.instance.spec
    z = (q < cfg.hi).astype(int)
    x = cfg.policy.x(spec.rho, z)
    b = np.where(e == 0, x, 0.0)
    if (spec.K @ b > spec.C + CAPACITY_TOL).any():
        raise InvariantViolation(f"allocation {b} exceeds capacity")
    return b


def _nominal_rate(q, cfg: SimConfig) -> np.ndarray:
    return np.where(np.asarray(q) > 0, cfg.instance.spec.rho, 0.0)


@dataclass
class SimState:
    t: float
    q: np.ndarray
    head_residual: np.ndarray
    next_arrival: np.ndarray
    e: np.ndarray
    B_cum: np.ndarray
    n_arrivals: np.ndarray
    n_departures: np.ndarray
    unused_capacity: np.ndarray
    holding_integral: float = 0.0

    def copy(self) -> "SimState":
        return copy.deepcopy(self)


@dataclass
class Event:
    kind: int
    cls: int
    t: float

    @property
    def name(self) -> str:
        return EVENT_NAMES[self.kind]


def initial_state(cfg: SimConfig, streams: VariateStreams, policy: bool = True) -> SimState:
    init = cfg.init
    J = init.q0.shape[0]
    q = init.q0.copy()
    nxt = np.empty(J)
    hres = np.zeros(J)
    for j in range(J):
        ua = init.residual_arrival[j]
        nxt[j] = ua if ua > 0 else streams.next(ARRIVAL, j)
        if q[j] > 0:
            us = init.residual_service[j]
            hres[j] = us if us > 0 else streams.next(SERVICE, j)
    if not policy:
        e = np.zeros(J, dtype=np.int8)
    elif init.e0 is None:
        e = (q < cfg.lo).astype(np.int8)
    else:
        e = (init.e0.astype(bool) | (q < cfg.lo)).astype(np.int8)
    I = cfg.instance.spec.I
    return SimState(0.0, q, hres, nxt, e, np.zeros(J), np.zeros(J, dtype=np.int64),
                    np.zeros(J, dtype=np.int64), np.zeros(I))


def step(state: SimState, cfg: SimConfig, streams: VariateStreams,
         horizon: float | None = None, policy: bool = True) -> tuple[SimState, Event]:
    """Advance to the next arrival, departure or the horizon.

    Simultaneous events: departures before arrivals, lower class first.
    """
    horizon = cfg.horizon if horizon is None else horizon
    s = state.copy()
    J = s.q.shape[0]
    b = policy_rate(s.q, s.e, cfg) if policy else _nominal_rate(s.q, cfg)

    best, kind, cls = np.inf, END_EV, -1
    for j in range(J):
        if s.q[j] > 0 and b[j] > 0.0:
            td = s.t + s.head_residual[j] / b[j]
            if td < best:
                best, kind, cls = td, DEPARTURE_EV, j
    for j in range(J):
        if s.next_arrival[j] < best:
            best, kind, cls = s.next_arrival[j], ARRIVAL_EV, j
    if best > horizon:
        best, kind, cls = horizon, END_EV, -1

    dt = best - s.t
    if dt > 0.0:
        spec = cfg.instance.spec
        for j in range(J):
            s.B_cum[j] = s.B_cum[j] + b[j] * dt
            if s.q[j] > 0:
                s.head_residual[j] = s.head_residual[j] - b[j] * dt
                if s.head_residual[j] < 0.0:
                    s.head_residual[j] = 0.0
        s.unused_capacity += (spec.C - spec.K @ b) * dt
        s.holding_integral += float(spec.h @ s.q) * dt
    s.t = best

    if kind == DEPARTURE_EV:
        s.q[cls] -= 1
        s.n_departures[cls] += 1
        s.head_residual[cls] = streams.next(SERVICE, cls) if s.q[cls] > 0 else 0.0
    elif kind == ARRIVAL_EV:
        s.q[cls] += 1
        s.n_arrivals[cls] += 1
        if s.q[cls] == 1:
            s.head_residual[cls] = streams.next(SERVICE, cls)
        s.next_arrival[cls] = s.next_arrival[cls] + streams.next(ARRIVAL, cls)
    if policy and kind != END_EV:
        if s.q[cls] < cfg.lo:
            s.e[cls] = 1
        elif s.e[cls] == 1 and s.q[cls] >= cfg.hi:
            s.e[cls] = 0
    return s, Event(kind, cls, best)


@dataclass(eq=False)
class Trajectory:
    """Piecewise-constant path: segment k covers ``[times[k], times[k+1])``.

    ``event[k]`` is the event that ends segment k (at ``times[k+1]``).
    Simultaneous events produce no zero-length segments; ``n_arrivals`` and
    ``n_departures`` count every event.
    """

    cfg: SimConfig
    times: np.ndarray
    q: np.ndarray
    b: np.ndarray
    e: np.ndarray
    event: np.ndarray
    event_class: np.ndarray
    q0: np.ndarray
    e0: np.ndarray
    q_end: np.ndarray
    n_arrivals: np.ndarray
    n_departures: np.ndarray
    B_end: np.ndarray
    policy_name: str = "threshold"
    meta: dict = field(default_factory=dict)

    @property
    def n_segments(self) -> int:
        return self.q.shape[0]

    @property
    def t_start(self) -> np.ndarray:
        return self.times[:-1]

    @property
    def t_end(self) -> np.ndarray:
        return self.times[1:]

    @property
    def durations(self) -> np.ndarray:
        return np.diff(self.times)

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def B_at_starts(self) -> np.ndarray:
        """Cumulative allocation at each segment start (row n is the end value)."""
        out = np.zeros((self.n_segments + 1, self.q.shape[1] if self.q.ndim == 2 else 0))
        np.cumsum(self.b * self.durations[:, None], axis=0, out=out[1:])
        return out

    def event_counts(self) -> tuple[np.ndarray, np.ndarray]:
        """Cumulative arrivals and departures per class at each segment start.

        Only valid when no events were merged into zero-length steps, which
        has probability one for continuous primitives.
        """
        n, J = self.q.shape
        arr = np.zeros((n + 1, J), dtype=np.int64)
        dep = np.zeros((n + 1, J), dtype=np.int64)
        for kind, target in ((ARRIVAL_EV, arr), (DEPARTURE_EV, dep)):
            hit = np.flatnonzero(self.event == kind)
            inc = np.zeros((n, J), dtype=np.int64)
            inc[hit, self.event_class[hit]] = 1
            np.cumsum(inc, axis=0, out=target[1:])
        return arr, dep

    def to_csv(self, path) -> None:
        J = self.q.shape[1]
        header = (["t_start", "t_end"] + [f"q_{j + 1}" for j in range(J)]
                  + [f"b_{j + 1}" for j in range(J)] + [f"e_{j + 1}" for j in range(J)]
                  + ["event_type", "event_class"])
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(header)
            for k in range(self.n_segments):
                cls = int(self.event_class[k])
                w.writerow([repr(float(self.times[k])), repr(float(self.times[k + 1]))]
                           + [int(v) for v in self.q[k]]
                           + [repr(float(v)) for v in self.b[k]]
                           + [int(v) for v in self.e[k]]
                           + [EVENT_NAMES[int(self.event[k])], cls + 1 if cls >= 0 else ""])


def _check_state(s: SimState):
    if (s.q < 0).any():
        raise InvariantViolation(f"negative queue {s.q}")


def run_python(cfg: SimConfig, policy: bool = True, block: int = 4096) -> Trajectory:
    """Reference implementation built on :func:`step` (slow; for testing)."""
    streams = VariateStreams(cfg.instance, cfg.arrival, cfg.service, cfg.seed, block)
    s = initial_state(cfg, streams, policy)
    q0, e0 = s.q.copy(), s.e.copy()
    times, qs, bs, es, evs, cls = [], [], [], [], [], []
    while True:
        b = policy_rate(s.q, s.e, cfg) if policy else _nominal_rate(s.q, cfg)
        before = s
        s, ev = step(s, cfg, streams, policy=policy)
        _check_state(s)
        if s.t > before.t:
            times.append(before.t)
            qs.append(before.q.copy())
            bs.append(b)
            es.append(before.e.copy())
            evs.append(ev.kind)
            cls.append(ev.cls)
        if ev.kind == END_EV:
            break
    J = q0.shape[0]
    return Trajectory(
        cfg=cfg,
        times=np.array(times + [s.t]),
        q=np.array(qs, dtype=np.int32).reshape(-1, J),
        b=np.array(bs, dtype=float).reshape(-1, J),
        e=np.array(es, dtype=np.int8).reshape(-1, J),
        event=np.array(evs, dtype=np.int8),
        event_class=np.array(cls, dtype=np.int16),
        q0=q0, e0=e0, q_end=s.q.copy(),
        n_arrivals=s.n_arrivals, n_departures=s.n_departures, B_end=s.B_cum,
        policy_name="threshold" if policy else "nominal",
    )


def _run_compiled(cfg: SimConfig, policy: bool, block: int = 4096) -> Trajectory:
    streams = VariateStreams(cfg.instance, cfg.arrival, cfg.service, cfg.seed, block)
    s = initial_state(cfg, streams, policy)
    q0, e0 = s.q.copy(), s.e.copy()
    J = q0.shape[0]
    q = s.q.copy()
    e = s.e.copy()
    hres, nxt, B = s.head_residual.copy(), s.next_arrival.copy(), s.B_cum.copy()
    narr = np.zeros(J, dtype=np.int64)
    ndep = np.zeros(J, dtype=np.int64)
    alloc = np.ascontiguousarray(cfg.allocation_table) if policy else np.zeros((1, J))
    rho = np.asarray(cfg.instance.spec.rho, dtype=float)

    expected = cfg.horizon * float(cfg.instance.alpha_r.sum()) * 2.2 + 1024
    cap = int(min(expected, 5e8))
    out_t = np.empty(cap)
    out_q = np.empty((cap, J), dtype=np.int32)
    out_b = np.empty((cap, J))
    out_e = np.empty((cap, J), dtype=np.int8)
    out_ev = np.empty(cap, dtype=np.int8)
    out_cls = np.empty(cap, dtype=np.int16)
    clock = np.zeros(1)
    nseg = np.zeros(1, dtype=np.int64)
    need = np.zeros(2, dtype=np.int64)
    while True:
        status = _fastloop.event_loop(clock, float(cfg.horizon), q, hres, nxt, e, B, narr, ndep,
                                      cfg.lo, cfg.hi, alloc, rho, policy,
                                      streams.buf, streams.pos,
                                      out_t, out_q, out_b, out_e, out_ev, out_cls, nseg, need)
        if status == _fastloop.DONE:
            break
        if status == _fastloop.NEED_VARIATE:
            streams.refill(int(need[0]), int(need[1]))
        else:
            cap = int(cap * 1.5) + 1024
            out_t = np.resize(out_t, cap)
            out_q = np.resize(out_q, (cap, J))
            out_b = np.resize(out_b, (cap, J))
            out_e = np.resize(out_e, (cap, J))
            out_ev = np.resize(out_ev, cap)
            out_cls = np.resize(out_cls, cap)
    n = int(nseg[0])
    if (q < 0).any():
        raise InvariantViolation(f"negative queue {q}")
    times = np.empty(n + 1)
    times[:n] = out_t[:n]
    times[n] = clock[0]
    return Trajectory(
        cfg=cfg, times=times, q=out_q[:n].copy(), b=out_b[:n].copy(), e=out_e[:n].copy(),
        event=out_ev[:n].copy(), event_class=out_cls[:n].copy(),
        q0=q0, e0=e0, q_end=q, n_arrivals=narr, n_departures=ndep, B_end=B,
        policy_name="threshold" if policy else "nominal",
    )


def run(cfg: SimConfig) -> Trajectory:
    """Simulate the threshold policy up to ``cfg.horizon`` (unscaled time)."""
    return _run_compiled(cfg, policy=True)


def run_baseline(cfg: SimConfig, baseline: str = "nominal") -> Trajectory:
    """Comparison run: every nonempty class gets its nominal rate, no thresholds."""
    if baseline != "nominal":
        raise ValueError(f"unknown baseline {baseline!r}")
    return _run_compiled(cfg, policy=False)
