"""Skorokhod map, reflected Brownian motion and the HGI benchmark costs."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from .estimators import CostEstimate
from .model import NetworkSpec

__all__ = [
    "SkorokhodPath",
    "skorokhod_1d",
    "skorokhod",
    "RbmConfig",
    "rbm_path",
    "rbm_chunks",
    "hgi_discounted",
    "hgi_ergodic",
    "diffusion_coefficients",
    "write_path_csv",
]


@dataclass(frozen=True, eq=False)
class SkorokhodPath:
    """Values of a path on a strictly increasing time grid.

    ``piecewise`` records how the path is read between grid points
    (``"constant"`` or ``"linear"``). The running-maximum formula is exact at
    the grid points under either reading for piecewise-linear paths since
    extremes of a linear piece sit at its ends.
    """

    times: np.ndarray
    values: np.ndarray
    piecewise: str = "constant"

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or v.shape[0] != t.shape[0]:
            raise ValueError("need one value (row) per time point")
        if t.size > 1 and not (np.diff(t) > 0).all():
            raise ValueError("times must be strictly increasing")
        if self.piecewise not in ("constant", "linear"):
            raise ValueError("piecewise must be 'constant' or 'linear'")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)


def _values(path) -> np.ndarray:
    return path.values if isinstance(path, SkorokhodPath) else np.asarray(path, dtype=float)


def skorokhod_1d(path) -> tuple[np.ndarray, np.ndarray]:
    """Reflect a scalar path at 0.

    Returns ``(phi, reg)`` with ``reg(t) = max_{s<=t} (-f(s))^+`` and
    ``phi = f + reg``.
    """
    f = _values(path)
    if f.ndim != 1:
        raise ValueError("skorokhod_1d expects a scalar path")
    reg = np.maximum.accumulate(np.maximum(-f, 0.0))
    return f + reg, reg


def skorokhod(path) -> tuple[np.ndarray, np.ndarray]:
    """Componentwise reflection of an ``(n, d)`` path."""
    f = _values(path)
    if f.ndim == 1:
        return skorokhod_1d(f)
    reg = np.maximum.accumulate(np.maximum(-f, 0.0), axis=0)
    return f + reg, reg


def _psd_factor(S: np.ndarray) -> np.ndarray:
    """``L`` with ``L @ L.T == S`` for symmetric positive semidefinite ``S``."""
    vals, vecs = np.linalg.eigh(S)
    scale = max(1.0, float(np.abs(vals).max(initial=0.0)))
    if vals.min(initial=0.0) < -1e-10 * scale:
        raise ValueError(f"covariance is not positive semidefinite (eigenvalue {vals.min():.3g})")
    return vecs * np.sqrt(np.clip(vals, 0.0, None))[None, :]


@dataclass(frozen=True, eq=False)
class RbmConfig:
    """Reflected Brownian motion ``Gamma(w0 + theta t + L B(t))``.

    ``dt`` is the base step; ``refine`` halves it that many times by
    Brownian-bridge midpoint insertion, so paths at different refinement
    levels share the same coarse increments.

    By default the reflection uses the running maximum over grid values,
    which underestimates the continuous regulator by O(sqrt(dt)). With
    ``bridge=True`` the minimum of each coordinate between grid points is
    drawn from its Brownian-bridge law, which makes every coordinate's
    marginal exact at the grid points (the joint law across coordinates is
    still approximate).
    """

    w0: np.ndarray
    theta: np.ndarray
    Sigma: np.ndarray
    dt: float = 1e-3
    T: float = 5e3
    seed: int = 0
    refine: int = 0
    bridge: bool = False

    def __post_init__(self):
        w0 = np.atleast_1d(np.asarray(self.w0, dtype=float))
        theta = np.atleast_1d(np.asarray(self.theta, dtype=float))
        S = np.atleast_2d(np.asarray(self.Sigma, dtype=float))
        d = w0.shape[0]
        if theta.shape != (d,) or S.shape != (d, d):
            raise ValueError("w0, theta and Sigma dimensions disagree")
        if (w0 < 0).any():
            raise ValueError("w0 must be nonnegative")
        if not np.allclose(S, S.T, atol=1e-12, rtol=0):
            raise ValueError("Sigma must be symmetric")
        if not (self.dt > 0 and self.T > 0):
            raise ValueError("dt and T must be positive")
        if self.refine < 0:
            raise ValueError("refine must be >= 0")
        object.__setattr__(self, "w0", w0)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "Sigma", S)
        object.__setattr__(self, "_L", _psd_factor(S))

    @property
    def dim(self) -> int:
        return self.w0.shape[0]

    @property
    def n_steps(self) -> int:
        """Number of steps at the finest level."""
        return int(round(self.T / self.dt)) << self.refine

    @property
    def step(self) -> float:
        return self.dt / (1 << self.refine)

    def with_(self, **changes) -> "RbmConfig":
        kw = {k: getattr(self, k) for k in ("w0", "theta", "Sigma", "dt", "T", "seed", "refine", "bridge")}
        kw.update(changes)
        return RbmConfig(**kw)


def _bm_increments(cfg: RbmConfig, seed_key: tuple, chunk: int) -> Iterator[np.ndarray]:
    """Standard Brownian increments at the finest level, in chunks of coarse steps."""
    root = np.random.SeedSequence(int(cfg.seed), spawn_key=seed_key)
    gens = [np.random.Generator(np.random.Philox(s)) for s in root.spawn(1 + cfg.refine)]
    n = int(round(cfg.T / cfg.dt))
    d = cfg.dim
    done = 0
    while done < n:
        m = min(chunk, n - done)
        inc = math.sqrt(cfg.dt) * gens[0].standard_normal((m, d))
        h = cfg.dt
        for lvl in range(1, cfg.refine + 1):
            xi = gens[lvl].standard_normal(inc.shape)
            left = 0.5 * inc + 0.5 * math.sqrt(h) * xi
            out = np.empty((2 * inc.shape[0], d))
            out[0::2] = left
            out[1::2] = inc - left
            inc = out
            h /= 2
        done += m
        yield inc


def rbm_chunks(cfg: RbmConfig, replication: int = 0, chunk: int = 1 << 16
               ) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield ``(t, W)`` blocks of the reflected path on the fine grid.

    The first block starts with ``t = 0``; reflection is carried across
    blocks through the running maximum, so memory stays O(chunk).
    """
    h = cfg.step
    X0 = cfg.w0.copy()
    reg = np.maximum(-X0, 0.0)
    k0 = 0
    first = True
    if cfg.bridge:
        bridge_gen = np.random.Generator(np.random.Philox(
            np.random.SeedSequence(int(cfg.seed), spawn_key=(replication, 1 << 20))))
        var_h = np.diag(cfg.Sigma) * h
    for inc in _bm_increments(cfg, (replication,), chunk):
        m = inc.shape[0]
        dX = cfg.theta[None, :] * h + inc @ cfg._L.T
        X = X0[None, :] + np.cumsum(dX, axis=0)
        if cfg.bridge:
            prev = np.vstack([X0[None, :], X[:-1]])
            e = -np.log1p(-bridge_gen.random(X.shape))  # standard exponential
            low = 0.5 * (prev + X - np.sqrt((X - prev) ** 2 + 2.0 * var_h[None, :] * e))
        else:
            low = X
        X0 = X[-1].copy()
        run = np.maximum.accumulate(np.maximum(-low, 0.0), axis=0)
        run = np.maximum(run, reg[None, :])
        reg = run[-1].copy()
        W = X + run
        t = (k0 + 1 + np.arange(m)) * h
        if first:
            t = np.concatenate([[0.0], t])
            W = np.vstack([cfg.w0[None, :], W])
            first = False
        k0 += m
        yield t, W


def rbm_path(cfg: RbmConfig, replication: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Full reflected path ``(t, W)`` on the fine grid (``n_steps + 1`` points)."""
    parts = list(rbm_chunks(cfg, replication))
    if not parts:
        return np.zeros(1), cfg.w0[None, :].copy()
    return np.concatenate([p[0] for p in parts]), np.vstack([p[1] for p in parts])


def _vectorized(cost) -> Callable[[np.ndarray], np.ndarray]:
    """Accept an ``HhatVertices``-style callable or an object with ``hhat``."""
    if hasattr(cost, "hhat"):
        return lambda W: np.array([cost.hhat(np.maximum(w, 0.0))[0] for w in W])
    return lambda W: np.asarray(cost(W), dtype=float)


def _estimate(values, horizon, truncation_bound=0.0) -> CostEstimate:
    v = np.asarray(values, dtype=float)
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return CostEstimate(float(v.mean()), se, int(v.size), float(horizon), float(truncation_bound))


def hgi_ergodic(cfg: RbmConfig, cost, replications: int = 1, burn_in: float = 0.2) -> CostEstimate:
    """Long-run average of ``hhat(W)`` with the first ``burn_in`` fraction dropped.

    Each replication averages the grid values after burn-in (left-point
    rule); the standard error is taken across replications.
    """
    if not 0 <= burn_in < 1:
        raise ValueError("burn_in must be in [0, 1)")
    f = _vectorized(cost)
    t0 = burn_in * cfg.T
    means = []
    for rep in range(replications):
        total, count = 0.0, 0
        for t, W in rbm_chunks(cfg, rep):
            keep = (t >= t0 - 1e-12) & (t < cfg.T - 0.5 * cfg.step)
            if keep.any():
                total += float(f(W[keep]).sum())
                count += int(keep.sum())
        means.append(total / count)
    return _estimate(means, cfg.T)


def hgi_discounted(cfg: RbmConfig, varsigma: float, cost, replications: int = 1) -> CostEstimate:
    """``int_0^T exp(-varsigma t) hhat(W(t)) dt`` by the trapezoidal rule.

    ``truncation_bound`` is ``exp(-varsigma T) max hhat(W) / varsigma``,
    maximized over replications.
    """
    if not varsigma > 0:
        raise ValueError("discount rate must be positive")
    f = _vectorized(cost)
    vals, bound = [], 0.0
    for rep in range(replications):
        total, hmax = 0.0, 0.0
        prev = None
        for t, W in rbm_chunks(cfg, rep):
            hv = f(W)
            hmax = max(hmax, float(hv.max()))
            g = np.exp(-varsigma * t) * hv
            if prev is not None:
                g = np.concatenate([[prev], g])
            total += float(0.5 * cfg.step * (g[:-1] + g[1:]).sum())
            prev = g[-1]
        vals.append(total)
        bound = max(bound, math.exp(-varsigma * cfg.T) * hmax / varsigma)
    return _estimate(vals, cfg.T, bound)


def diffusion_coefficients(spec: NetworkSpec) -> tuple[np.ndarray, np.ndarray]:
    """Drift ``theta = K eta`` and covariance ``K M D M^T K^T`` of the netput limit.

    ``D_jj = alpha_j^3 sigma_u_j^2 + rho_j beta_j^3 sigma_v_j^2``: the
    renewal-CLT variance rate of arrivals plus that of service completions
    run at the nominal rate ``rho_j``.
    """
    D = spec.alpha**3 * spec.sigma_u**2 + spec.rho * spec.beta**3 * spec.sigma_v**2
    KM = spec.KM
    Sigma = KM @ np.diag(D) @ KM.T
    return spec.theta.copy(), 0.5 * (Sigma + Sigma.T)


def write_path_csv(path, t: np.ndarray, W: np.ndarray) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t"] + [f"W_{i + 1}" for i in range(W.shape[1])])
        for ti, row in zip(t, W):
            w.writerow([repr(float(ti))] + [repr(float(x)) for x in row])
