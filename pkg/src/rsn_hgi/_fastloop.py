"""Compiled event loop. Mirrors ``simengine.step`` operation for operation."""

from __future__ import annotations

import numpy as np
from numba import njit

ARRIVAL_EV, DEPARTURE_EV, END_EV = 0, 1, 2
DONE, OUT_FULL, NEED_VARIATE = 0, 1, 2


@njit(cache=True)
def event_loop(clock, horizon, q, hres, nxt, e, B, narr, ndep,
               lo, hi, alloc, rho, use_policy,
               buf, pos,
               out_t, out_q, out_b, out_e, out_ev, out_cls, nseg, need):
    """Advance until ``horizon``, output full, or a variate buffer runs dry.

    ``clock`` and ``nseg`` are length-1 arrays updated in place; all state
    arrays are mutated in place. ``need`` receives (kind, class) on
    NEED_VARIATE. The state is never partially updated when returning early.
    """
    J = q.shape[0]
    block = buf.shape[2]
    b = np.empty(J)
    while True:
        t = clock[0]
        # allocation for the current state
        if use_policy:
            zi = 0
            for j in range(J):
                if q[j] < hi:
                    zi += 1 << j
            for j in range(J):
                b[j] = alloc[zi, j] if e[j] == 0 else 0.0
        else:
            for j in range(J):
                b[j] = rho[j] if q[j] > 0 else 0.0

        best = np.inf
        kind = END_EV
        cls = -1
        for j in range(J):
            if q[j] > 0 and b[j] > 0.0:
                td = t + hres[j] / b[j]
                if td < best:
                    best = td
                    kind = DEPARTURE_EV
                    cls = j
        for j in range(J):
            if nxt[j] < best:
                best = nxt[j]
                kind = ARRIVAL_EV
                cls = j
        if best > horizon:
            best = horizon
            kind = END_EV
            cls = -1

        # make sure the event can be applied before touching the state
        if kind == DEPARTURE_EV and q[cls] > 1 and pos[1, cls] >= block:
            need[0] = 1
            need[1] = cls
            return NEED_VARIATE
        if kind == ARRIVAL_EV:
            if pos[0, cls] >= block:
                need[0] = 0
                need[1] = cls
                return NEED_VARIATE
            if q[cls] == 0 and pos[1, cls] >= block:
                need[0] = 1
                need[1] = cls
                return NEED_VARIATE
        dt = best - t
        if dt > 0.0 and nseg[0] >= out_t.shape[0]:
            return OUT_FULL

        if dt > 0.0:
            k = nseg[0]
            out_t[k] = t
            for j in range(J):
                out_q[k, j] = q[j]
                out_b[k, j] = b[j]
                out_e[k, j] = e[j]
            out_ev[k] = kind
            out_cls[k] = cls
            nseg[0] = k + 1
            for j in range(J):
                B[j] = B[j] + b[j] * dt
                if q[j] > 0:
                    hres[j] = hres[j] - b[j] * dt
                    if hres[j] < 0.0:
                        hres[j] = 0.0
        clock[0] = best

        if kind == END_EV:
            return DONE
        if kind == DEPARTURE_EV:
            q[cls] -= 1
            ndep[cls] += 1
            if q[cls] > 0:
                hres[cls] = buf[1, cls, pos[1, cls]]
                pos[1, cls] += 1
            else:
                hres[cls] = 0.0
        else:
            q[cls] += 1
            narr[cls] += 1
            if q[cls] == 1:
                hres[cls] = buf[1, cls, pos[1, cls]]
                pos[1, cls] += 1
            nxt[cls] = nxt[cls] + buf[0, cls, pos[0, cls]]
            pos[0, cls] += 1
        if use_policy:
            if q[cls] < lo:
                e[cls] = 1
            elif e[cls] == 1 and q[cls] >= hi:
                e[cls] = 0
