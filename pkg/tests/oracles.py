"""Reference computations that share no code with the package."""

import itertools

import numpy as np
from scipy.linalg import null_space
from scipy.optimize import linprog


def hhat_bfs(spec, w, beta=None):
    """Minimal h.q over q >= 0 with K M q = w by enumerating basic feasible solutions."""
    beta = spec.beta if beta is None else np.asarray(beta)
    A = spec.K / beta[None, :]
    I, J = A.shape
    best = np.inf
    for cols in itertools.combinations(range(J), I):
        sub = A[:, cols]
        if abs(np.linalg.det(sub)) < 1e-12:
            continue
        x = np.linalg.solve(sub, w)
        if (x >= -1e-10).all():
            best = min(best, float(spec.h[list(cols)] @ x))
    return best


def cost_direction(spec):
    """Unit kernel direction of steepest cost decrease, or None when every direction is neutral."""
    N = null_space(spec.K)
    if N.shape[1] == 0:
        return None
    g = N @ (N.T @ (spec.h * spec.beta))
    n = np.linalg.norm(g)
    if n < 1e-10:
        return None
    return -g / n


def dtilde_ipm(spec, q):
    """sup v.u over v in ker(K) with q + beta v >= 0, by interior point on a scipy null-space basis."""
    u = cost_direction(spec)
    if u is None:
        return 0.0
    N = null_space(spec.K)
    A_ub = -(spec.beta[:, None] * N)
    res = linprog(-(N.T @ u), A_ub=A_ub, b_ub=np.asarray(q, float),
                  bounds=[(None, None)] * N.shape[1], method="highs-ipm")
    assert res.status == 0, res.message
    return float(-res.fun)


def lambda_value(spec):
    u = cost_direction(spec)
    return 0.0 if u is None else float((spec.h * spec.beta) @ u)
