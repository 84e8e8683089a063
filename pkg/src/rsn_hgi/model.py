"""Network topology, heavy-traffic parameterization and condition checks."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

__all__ = [
    "StructuralError",
    "NetworkSpec",
    "TrafficInstance",
    "Violation",
    "ValidationReport",
    "validate",
    "make_instance",
    "two_link_linear_network",
]

# relative tolerance for the capacity balance C = K rho
CAPACITY_RTOL = 1e-12


class StructuralError(ValueError):
    """Inputs are not shape-consistent (as opposed to violating a condition)."""


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class NetworkSpec:
    """A resource-sharing network and its limiting heavy-traffic parameters.

    ``K`` is the I x J resource-by-class incidence matrix. ``alpha`` and
    ``beta`` are limiting arrival rates and reciprocal mean job sizes;
    ``alpha_bar``/``beta_bar`` the first-order perturbations; ``sigma_u`` and
    ``sigma_v`` the limiting standard deviations of interarrival times and job
    sizes; ``h`` the holding cost per job per unit time.
    """

    K: np.ndarray
    C: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    alpha_bar: np.ndarray
    beta_bar: np.ndarray
    sigma_u: np.ndarray
    sigma_v: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        K = np.atleast_2d(np.array(self.K, dtype=float))
        object.__setattr__(self, "K", _frozen(K))
        for name in ("C", "alpha", "beta", "alpha_bar", "beta_bar",
                     "sigma_u", "sigma_v", "h"):
            object.__setattr__(self, name, _frozen(np.atleast_1d(getattr(self, name))))
        self._check_shapes()

    def _check_shapes(self):
        if self.K.ndim != 2:
            raise StructuralError(f"K must be a matrix, got ndim={self.K.ndim}")
        I, J = self.K.shape
        if I == 0 or J == 0:
            raise StructuralError("K must have at least one resource and one class")
        if self.C.shape != (I,):
            raise StructuralError(f"C has shape {self.C.shape}, expected ({I},)")
        for name in ("alpha", "beta", "alpha_bar", "beta_bar", "sigma_u", "sigma_v", "h"):
            shape = getattr(self, name).shape
            if shape != (J,):
                raise StructuralError(f"{name} has shape {shape}, expected ({J},)")

    @property
    def I(self) -> int:
        return self.K.shape[0]

    @property
    def J(self) -> int:
        return self.K.shape[1]

    @property
    def rho(self) -> np.ndarray:
        return self.alpha / self.beta

    @property
    def rho_star(self) -> float:
        return float(self.rho.min())

    @property
    def eta(self) -> np.ndarray:
        return (self.alpha_bar * self.beta - self.alpha * self.beta_bar) / self.beta**2

    @property
    def theta(self) -> np.ndarray:
        return self.K @ self.eta

    @property
    def M(self) -> np.ndarray:
        return np.diag(1.0 / self.beta)

    @property
    def KM(self) -> np.ndarray:
        return self.K / self.beta[None, :]

    def with_(self, **changes) -> "NetworkSpec":
        """Return a copy with some fields replaced."""
        fields = {name: getattr(self, name) for name in self.__dataclass_fields__}
        fields.update(changes)
        return NetworkSpec(**fields)

    def to_dict(self) -> dict[str, Any]:
        return {name: getattr(self, name).tolist() for name in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "NetworkSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise StructuralError(f"unknown network keys: {sorted(unknown)}")
        missing = known - set(d)
        # perturbations default to zero; everything else is required
        for optional in ("alpha_bar", "beta_bar"):
            if optional in missing:
                missing.discard(optional)
        if missing:
            raise StructuralError(f"missing network keys: {sorted(missing)}")
        J = len(np.atleast_1d(d["alpha"]))
        kw = dict(d)
        kw.setdefault("alpha_bar", np.zeros(J))
        kw.setdefault("beta_bar", np.zeros(J))
        return cls(**kw)


@dataclass(frozen=True)
class Violation:
    condition: str
    index: int | None
    message: str

    def __str__(self) -> str:
        return self.message


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...]
    theta: np.ndarray

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def messages(self) -> list[str]:
        return [v.message for v in self.violations]

    def render(self) -> str:
        if self.ok:
            return "network valid; theta = " + np.array2string(self.theta, precision=6)
        return "\n".join(f"[{v.condition}] {v.message}" for v in self.violations)


def validate(spec: NetworkSpec) -> ValidationReport:
    """Check the standing conditions on ``spec``.

    Resources and classes are reported 1-based in messages (``index`` is
    0-based). Shape problems are raised as :class:`StructuralError` when the
    spec is constructed, so they never show up here.
    """
    out: list[Violation] = []
    K = spec.K
    if not np.all((K == 0) | (K == 1)):
        bad = np.argwhere((K != 0) & (K != 1))
        for i, j in bad:
            out.append(Violation("incidence", int(j),
                                 f"K[{i + 1},{j + 1}] = {K[i, j]} is not 0/1"))
    for j in np.flatnonzero(~K.any(axis=0)):
        out.append(Violation("incidence", int(j), f"class {j + 1} uses no resource"))
    for name in ("alpha", "beta", "sigma_u", "sigma_v", "h"):
        for j in np.flatnonzero(~(getattr(spec, name) > 0)):
            out.append(Violation("positivity", int(j), f"{name} not > 0 at class {j + 1}"))
    for i in np.flatnonzero(~(spec.C > 0)):
        out.append(Violation("positivity", int(i), f"C not > 0 at resource {i + 1}"))

    with np.errstate(divide="ignore", invalid="ignore"):
        Krho = K @ spec.rho
        theta = K @ spec.eta
    for i in range(spec.I):
        if not abs(Krho[i] - spec.C[i]) <= CAPACITY_RTOL * max(abs(spec.C[i]), abs(Krho[i]), 1e-300):
            out.append(Violation("capacity", i,
                                 f"C ≠ Kρ at resource {i + 1} "
                                 f"(C={spec.C[i]:.12g}, Kρ={Krho[i]:.12g})"))
    for i in np.flatnonzero(~(theta < 0)):
        out.append(Violation("drift", int(i),
                             f"θ not < 0 at resource {i + 1} (θ={theta[i]:.6g})"))

    local = (K == 1) & (K.sum(axis=0) == 1)[None, :]
    for i in np.flatnonzero(~local.any(axis=1)):
        out.append(Violation("local-traffic", int(i),
                             f"no local-traffic class at resource {i + 1}"))
    return ValidationReport(tuple(out), theta)


@dataclass(frozen=True, eq=False)
class TrafficInstance:
    """The r-th system of the heavy-traffic sequence."""

    spec: NetworkSpec
    r: float
    alpha_r: np.ndarray = field(init=False)
    beta_r: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "alpha_r", _frozen(self.spec.alpha + self.spec.alpha_bar / self.r))
        object.__setattr__(self, "beta_r", _frozen(self.spec.beta + self.spec.beta_bar / self.r))

    @property
    def rho_r(self) -> np.ndarray:
        return self.alpha_r / self.beta_r

    @property
    def M_r(self) -> np.ndarray:
        return 1.0 / self.beta_r

    @property
    def KM_r(self) -> np.ndarray:
        return self.spec.K / self.beta_r[None, :]


def make_instance(spec: NetworkSpec, r: float) -> TrafficInstance:
    """Build the system at traffic parameter ``r`` (``alpha + alpha_bar/r`` etc.)."""
    if not r >= 1:
        raise ValueError(f"traffic parameter r must be >= 1, got {r}")
    inst = TrafficInstance(spec, float(r))
    for name, vec in (("alpha_r", inst.alpha_r), ("beta_r", inst.beta_r)):
        bad = np.flatnonzero(~(vec > 0))
        if bad.size:
            raise ValueError(f"{name} not > 0 at class {bad[0] + 1} for r={r}")
    return inst


def two_link_linear_network(h=(1.0, 1.0, 1.0), beta_bar=(1.0, 1.0, 1.0)) -> NetworkSpec:
    """Two resources, three classes; class 3 uses both links. Exponential primitives."""
    ones = np.ones(3)
    return NetworkSpec(
        K=[[1, 0, 1], [0, 1, 1]],
        C=[2.0, 2.0],
        alpha=ones,
        beta=ones,
        alpha_bar=np.zeros(3),
        beta_bar=beta_bar,
        sigma_u=ones,
        sigma_v=ones,
        h=h,
    )
