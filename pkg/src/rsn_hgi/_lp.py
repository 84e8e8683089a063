"""Thin wrapper over scipy's HiGHS dual simplex with tight tolerances."""

from __future__ import annotations

import numpy as np
from scipy.optimize import linprog

_OPTIONS = {
    "primal_feasibility_tolerance": 1e-10,
    "dual_feasibility_tolerance": 1e-10,
    "presolve": True,
}


class LPError(RuntimeError):
    pass


def solve(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, bounds=(0, None)):
    """Minimize ``c @ x``; returns the scipy result (status 0, 2 or 3)."""
    res = linprog(np.asarray(c, dtype=float), A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                  bounds=bounds, method="highs-ds", options=_OPTIONS)
    if res.status not in (0, 2, 3):
        raise LPError(f"LP solver failed: {res.message}")
    return res


def feasible(A_ub=None, b_ub=None, A_eq=None, b_eq=None, bounds=(0, None), n=None) -> bool:
    if n is None:
        n = (A_ub if A_ub is not None else A_eq).shape[1]
    return solve(np.zeros(n), A_ub, b_ub, A_eq, b_eq, bounds).status == 0
