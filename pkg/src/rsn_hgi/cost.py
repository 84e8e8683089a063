"""Minimal holding cost for a workload and the distance from cost-minimality.

Two LPs:

* ``hhat(w)``: minimize ``h @ q`` over ``q >= 0`` with ``K M q = w``;
* ``dtilde(q)``: maximize ``v @ u_last`` over ``v`` in ker(K) with
  ``q + beta * v >= 0``.

They are solved independently, which is what makes
``h @ q - hhat(K M q) == |lambda| * dtilde(q)`` a useful cross-check.
:class:`HhatVertices` evaluates ``hhat`` in bulk by enumerating the vertices
of the dual feasible region.
"""

from __future__ import annotations

import itertools

import numpy as np

from . import _lp
from .kernel import KernelBasis, compute_basis
from .model import NetworkSpec

__all__ = ["CostOracle", "HhatVertices"]


class CostOracle:
    """LP evaluators bound to one network.

    Every method uses the limiting ``beta`` unless ``beta`` is passed
    explicitly; pass ``instance.beta_r`` to evaluate against the workload
    ``K M^r q`` of a finite-r system.
    """

    def __init__(self, spec: NetworkSpec, basis: KernelBasis | None = None, lp_tol: float = 1e-9):
        self.spec = spec
        self.basis = basis if basis is not None else compute_basis(spec)
        self.lp_tol = lp_tol

    def hhat(self, w, beta=None) -> tuple[float, np.ndarray]:
        spec = self.spec
        w = np.asarray(w, dtype=float)
        if w.shape != (spec.I,):
            raise ValueError(f"workload must have shape ({spec.I},)")
        if (w < 0).any():
            raise ValueError("workload must be nonnegative")
        beta = spec.beta if beta is None else np.asarray(beta, dtype=float)
        KM = spec.K / beta[None, :]
        res = _lp.solve(spec.h, A_eq=KM, b_eq=w, bounds=(0, None))
        if res.status != 0:
            raise _lp.LPError(f"workload LP failed for w={w}: {res.message}")
        q = np.maximum(res.x, 0.0)
        return float(spec.h @ q), q

    def dtilde(self, q, beta=None) -> float:
        b = self.basis
        if b.trivial:
            return 0.0
        q = np.asarray(q, dtype=float)
        if (q < 0).any():
            raise ValueError("queue vector must be nonnegative")
        beta = self.spec.beta if beta is None else np.asarray(beta, dtype=float)
        d = b.dim
        # q + beta * (U c) >= 0  <=>  -(beta[:, None] * U) c <= q
        A_ub = -(beta[:, None] * b.U)
        c = np.zeros(d)
        c[-1] = -1.0
        res = _lp.solve(c, A_ub, q, bounds=[(None, None)] * d)
        if res.status != 0:
            raise _lp.LPError(f"distance LP failed for q={q}: {res.message}")
        return max(0.0, float(-res.fun))

    def cost_gap(self, q, beta=None) -> float:
        q = np.asarray(q, dtype=float)
        beta_ = self.spec.beta if beta is None else np.asarray(beta, dtype=float)
        w = (self.spec.K / beta_[None, :]) @ q
        return float(self.spec.h @ q - self.hhat(w, beta)[0])


class HhatVertices:
    """``hhat(w) = max_k V[k] @ w`` over vertices of ``{y : (K M)^T y <= h}``.

    The dual region is pointed because ``K M`` has full row rank, and the
    primal is bounded for ``w >= 0``, so the optimum sits on a vertex.
    """

    def __init__(self, spec: NetworkSpec, beta=None, tol: float = 1e-9):
        beta = spec.beta if beta is None else np.asarray(beta, dtype=float)
        KM = spec.K / beta[None, :]
        h = spec.h
        I, J = KM.shape
        verts = []
        for cols in itertools.combinations(range(J), I):
            A = KM[:, cols].T
            if abs(np.linalg.det(A)) < 1e-12:
                continue
            y = np.linalg.solve(A, h[list(cols)])
            if (KM.T @ y <= h + tol * (1 + np.abs(h))).all():
                verts.append(y)
        if not verts:
            raise ValueError("dual region has no vertices; K must have full row rank")
        V = np.unique(np.round(np.array(verts), 12), axis=0)
        self.V = V
        self.lipschitz = float(np.linalg.norm(V, axis=1).max())

    def __call__(self, W) -> np.ndarray:
        """Evaluate on a single workload or on rows of ``W``."""
        W = np.asarray(W, dtype=float)
        if W.ndim == 1:
            return float((self.V @ W).max())
        out = np.empty(W.shape[0])
        step = 1 << 16
        for s in range(0, W.shape[0], step):
            out[s:s + step] = (W[s:s + step] @ self.V.T).max(axis=1)
        return out
