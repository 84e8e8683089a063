"""Offline policy synthesis: kernel basis, cost-reduction set and adjustment vectors.

Configurations ``z`` are 0/1 tuples of length J; ``z_j = 1`` marks class j as
near empty. Tables are indexed by ``z_index(z) = sum_j z_j 2**j``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import _lp
from .model import NetworkSpec

__all__ = [
    "KernelBasis",
    "PolicyTables",
    "compute_basis",
    "build_M",
    "compute_vc",
    "compute_vb",
    "raw_vb",
    "vb_bound",
    "synthesize",
    "check_invariants",
    "active_resources",
    "local_traffic_classes",
    "all_configs",
    "z_index",
]

FORMAT = "rsn-hgi-policy"
FORMAT_VERSION = 1

# strict inequalities are realized with this margin
MARGIN = 1e-6
_ORTH_TOL = 1e-10


def all_configs(J: int) -> Iterator[tuple[int, ...]]:
    """All z in {0,1}^J ordered by :func:`z_index`."""
    for idx in range(2**J):
        yield tuple((idx >> j) & 1 for j in range(J))


def z_index(z) -> int:
    return int(sum(int(zj) << j for j, zj in enumerate(z)))


def active_resources(K: np.ndarray, z) -> np.ndarray:
    """Resources used by at least one class with ``z_j = 0``."""
    z = np.asarray(z)
    return np.flatnonzero((K[:, z == 0] == 1).any(axis=1))


def local_traffic_classes(K: np.ndarray) -> np.ndarray:
    """For each resource the smallest class that uses only that resource (-1 if none)."""
    local = (K == 1) & (K.sum(axis=0) == 1)[None, :]
    return np.array([np.flatnonzero(row)[0] if row.any() else -1 for row in local])


@dataclass(frozen=True, eq=False)
class KernelBasis:
    """Orthonormal basis of ker(K) with the cost-reducing direction last.

    In the nontrivial case the first ``dim - 1`` columns span the kernel
    directions that leave holding cost unchanged, and ``u_last`` satisfies
    ``(h*beta) @ u_last = lam < 0``. In the trivial case every kernel
    direction is cost neutral, ``u_last`` is None and ``lam`` is 0.
    """

    U: np.ndarray
    trivial: bool
    u_last: np.ndarray | None
    lam: float

    @property
    def dim(self) -> int:
        return self.U.shape[1]


def _gram_schmidt(seeds: np.ndarray, project: np.ndarray, count: int) -> list[np.ndarray]:
    basis: list[np.ndarray] = []
    for s in seeds.T:
        if len(basis) == count:
            break
        v = project @ s
        for _ in range(2):  # second pass restores orthogonality lost to rounding
            for b in basis:
                v = v - (b @ v) * b
        n = np.linalg.norm(v)
        if n > 1e-8:
            basis.append(v / n)
    return basis


def compute_basis(spec: NetworkSpec) -> KernelBasis:
    K = spec.K
    J = spec.J
    dim = J - int(np.linalg.matrix_rank(K))
    if dim == 0:
        return KernelBasis(np.zeros((J, 0)), True, None, 0.0)
    P = np.eye(J) - np.linalg.pinv(K) @ K
    P = 0.5 * (P + P.T)
    g = spec.h * spec.beta
    p = P @ g
    pn = np.linalg.norm(p)
    if pn <= _ORTH_TOL * max(1.0, np.linalg.norm(g)):
        cols = _gram_schmidt(np.eye(J), P, dim)
        return KernelBasis(np.column_stack(cols), True, None, 0.0)
    u_last = -p / pn
    P_neutral = P - np.outer(u_last, u_last)
    cols = _gram_schmidt(np.eye(J), P_neutral, dim - 1)
    # re-orthogonalize u_last against the neutral columns (it already is, up to rounding)
    for b in cols:
        u_last = u_last - (b @ u_last) * b
    u_last /= np.linalg.norm(u_last)
    U = np.column_stack(cols + [u_last])
    return KernelBasis(U, False, u_last, float(g @ u_last))


def _in_M(basis: KernelBasis, z) -> bool:
    U = basis.U
    d = basis.dim
    ones = np.flatnonzero(np.asarray(z) == 1)
    A_ub = -U[ones, :] if ones.size else None
    b_ub = np.zeros(ones.size) if ones.size else None
    # v @ u_last is the last coefficient since U is orthonormal
    bounds = [(None, None)] * (d - 1) + [(1.0, None)]
    return _lp.feasible(A_ub, b_ub, bounds=bounds, n=d)


def build_M(spec: NetworkSpec, basis: KernelBasis) -> frozenset[tuple[int, ...]]:
    """Configurations from which cost can be reduced at fixed workload."""
    if basis.trivial:
        return frozenset()
    return frozenset(z for z in all_configs(spec.J) if _in_M(basis, z))


def compute_vc(spec: NetworkSpec, basis: KernelBasis, z) -> np.ndarray:
    """Canonical cost-reduction vector for ``z`` in M.

    Maximizes ``v @ u_last`` over kernel vectors with ``v_j >= 0`` where
    ``z_j = 1`` and ``|v|_inf <= 1``, then shrinks it so that
    ``rho - v > rho*/2`` holds with a margin.
    """
    if basis.trivial:
        raise ValueError("no cost-reduction vectors in the trivial case")
    U = basis.U
    d = basis.dim
    ones = np.flatnonzero(np.asarray(z) == 1)
    A_ub = np.vstack([U, -U, -U[ones, :]])
    b_ub = np.concatenate([np.ones(spec.J), np.ones(spec.J), np.zeros(ones.size)])
    c = np.zeros(d)
    c[-1] = -1.0
    res = _lp.solve(c, A_ub, b_ub, bounds=[(None, None)] * d)
    if res.status != 0 or -res.fun <= MARGIN:
        raise RuntimeError(f"configuration {tuple(z)} is in M but its cost-reduction LP "
                           f"has no improving solution (status {res.status})")
    v = U @ res.x
    v[ones] = np.maximum(v[ones], 0.0)
    rho = spec.rho
    slack = rho - spec.rho_star / 2 - MARGIN
    pos = v > 0
    t = min(1.0, float(np.min(slack[pos] / v[pos]))) if pos.any() else 1.0
    return t * v


def vb_bound(spec: NetworkSpec, lambda_tilde: float | None) -> float:
    bound = spec.rho_star / 4
    if lambda_tilde is not None:
        bound = min(bound, abs(lambda_tilde) / (4 * np.linalg.norm(spec.beta) * np.linalg.norm(spec.h)))
    return bound


def raw_vb(K: np.ndarray, z) -> np.ndarray:
    """Unscaled boundary vector: -J on nonempty classes, 1 on near-empty ones,
    local-traffic classes set to balance every active resource."""
    z = np.asarray(z)
    I, J = K.shape
    active = active_resources(K, z)
    local = local_traffic_classes(K)
    if (local[active] < 0).any():
        raise ValueError("local traffic condition fails; cannot build boundary vector")
    v = np.where(z == 1, 1.0, -float(J))
    for l in active:
        s = int(local[l])
        others = [j for j in range(J) if j != s and K[l, j] == 1]
        # no other class at l is the local class of a different resource
        v[s] = -sum(v[j] for j in others)
    return v


def compute_vb(spec: NetworkSpec, basis: KernelBasis, lambda_tilde: float | None, z) -> np.ndarray:
    v = raw_vb(spec.K, z)
    n = np.linalg.norm(v)
    if n == 0:
        return v
    bound = vb_bound(spec, None if basis.trivial else lambda_tilde)
    return v * (bound * (1 - 1e-9) / n)


@dataclass(frozen=True, eq=False)
class PolicyTables:
    basis: KernelBasis
    M_set: frozenset
    vc: dict
    vb: dict
    lambda_c: dict
    lambda_tilde: float | None
    rho_star: float
    _alloc: dict = field(default_factory=dict, repr=False)

    @property
    def J(self) -> int:
        return self.basis.U.shape[0]

    def x(self, rho: np.ndarray, z) -> np.ndarray:
        """Nominal rate minus adjustments for configuration ``z``."""
        z = tuple(int(v) for v in z)
        out = rho - self.vb[z]
        if z in self.M_set:
            out = out - self.vc[z]
        return out

    def allocation_table(self, rho: np.ndarray) -> np.ndarray:
        """Rows ``x(z)`` for every configuration, indexed by :func:`z_index`."""
        key = tuple(np.asarray(rho, dtype=float).tolist())
        if key not in self._alloc:
            tab = np.array([self.x(rho, z) for z in all_configs(self.J)])
            tab.setflags(write=False)
            self._alloc[key] = tab
        return self._alloc[key]

    def to_dict(self) -> dict:
        b = self.basis
        return {
            "format": FORMAT,
            "version": FORMAT_VERSION,
            "U": b.U.tolist(),
            "trivial": b.trivial,
            "lambda": b.lam,
            "M": sorted(list(z) for z in self.M_set),
            "vc": {"".join(map(str, z)): v.tolist() for z, v in sorted(self.vc.items())},
            "vb": {"".join(map(str, z)): v.tolist() for z, v in sorted(self.vb.items())},
            "lambda_c": {"".join(map(str, z)): v for z, v in sorted(self.lambda_c.items())},
            "lambda_tilde": self.lambda_tilde,
            "rho_star": self.rho_star,
        }

    def to_json(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyTables":
        if d.get("format") != FORMAT or d.get("version") != FORMAT_VERSION:
            raise ValueError(f"not a {FORMAT} v{FORMAT_VERSION} file")
        U = np.array(d["U"], dtype=float).reshape(len(d["U"]), -1)
        trivial = bool(d["trivial"])
        basis = KernelBasis(U, trivial, None if trivial else U[:, -1].copy(), float(d["lambda"]))
        key = lambda s: tuple(int(c) for c in s)  # noqa: E731
        return cls(
            basis=basis,
            M_set=frozenset(tuple(z) for z in d["M"]),
            vc={key(k): np.array(v) for k, v in d["vc"].items()},
            vb={key(k): np.array(v) for k, v in d["vb"].items()},
            lambda_c={key(k): float(v) for k, v in d["lambda_c"].items()},
            lambda_tilde=d["lambda_tilde"],
            rho_star=float(d["rho_star"]),
        )

    @classmethod
    def from_json(cls, path) -> "PolicyTables":
        with open(path) as f:
            return cls.from_dict(json.load(f))


def synthesize(spec: NetworkSpec, basis: KernelBasis | None = None) -> PolicyTables:
    """Compute every table the threshold policy needs."""
    if basis is None:
        basis = compute_basis(spec)
    M = build_M(spec, basis)
    vc = {z: compute_vc(spec, basis, z) for z in sorted(M)}
    lambda_c = {z: float(basis.lam * (v @ basis.u_last)) for z, v in vc.items()}
    lambda_tilde = max(lambda_c.values()) if lambda_c else None
    vb = {z: compute_vb(spec, basis, lambda_tilde, z) for z in all_configs(spec.J)}
    return PolicyTables(basis, M, vc, vb, lambda_c, lambda_tilde, spec.rho_star)


def check_invariants(spec: NetworkSpec, tables: PolicyTables, tol: float = 1e-10,
                     norm_bound: bool = True) -> list[str]:
    """Return a description of every violated table invariant (empty if none)."""
    out = []
    K, rho = spec.K, spec.rho
    b = tables.basis
    U = b.U
    if U.shape[1]:
        if np.abs(U.T @ U - np.eye(U.shape[1])).max() > tol:
            out.append("basis not orthonormal")
        if np.abs(K @ U).max() > tol:
            out.append("basis not in ker(K)")
    if not b.trivial:
        g = spec.h * spec.beta
        if U.shape[1] > 1 and np.abs(g @ U[:, :-1]).max() > tol:
            out.append("neutral basis columns change cost")
        if not b.lam < 0:
            out.append("lambda not < 0")
    rho_star = spec.rho_star
    for z in tables.M_set:
        v = tables.vc[z]
        zz = np.array(z)
        if np.abs(K @ v).max() > tol:
            out.append(f"K vc{z} != 0")
        if (v[zz == 1] < 0).any():
            out.append(f"vc{z} negative on near-empty class")
        if not v @ b.u_last > 0:
            out.append(f"vc{z} . u_last not > 0")
        if not (rho - v > rho_star / 2).all():
            out.append(f"rho - vc{z} not > rho*/2")
        lc = b.lam * (v @ b.u_last)
        if abs(lc - tables.lambda_c[z]) > tol or not lc < 0:
            out.append(f"lambda_c{z} wrong or not < 0")
    if tables.M_set:
        lt = max(tables.lambda_c.values())
        if tables.lambda_tilde is None or abs(lt - tables.lambda_tilde) > tol or not lt < 0:
            out.append("lambda_tilde wrong")
    bound = vb_bound(spec, tables.lambda_tilde if tables.M_set else None)
    for z in all_configs(spec.J):
        v = tables.vb[z]
        zz = np.array(z)
        if norm_bound and np.linalg.norm(v) > bound * (1 + 1e-12):
            out.append(f"|vb{z}| exceeds bound")
        act = active_resources(K, zz)
        if act.size and np.abs((K @ v)[act]).max() > tol:
            out.append(f"(K vb{z}) nonzero on active resources")
        if not (v[zz == 1] > 0).all():
            out.append(f"vb{z} not positive on near-empty class")
    return out
