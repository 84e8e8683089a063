"""Interarrival / job-size families and reproducible per-class variate streams.

Only families with a finite moment-generating function near the origin and
strictly positive support are accepted. Each family is parameterized by a
(mean, standard deviation) target at the current traffic parameter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import NetworkSpec, TrafficInstance, Violation

__all__ = ["DistributionSpec", "EXPONENTIAL", "check_families", "VariateStreams",
           "ARRIVAL", "SERVICE"]

FAMILIES = ("exponential", "erlang", "uniform")
ARRIVAL, SERVICE = 0, 1
_SD_RTOL = 1e-9


@dataclass(frozen=True)
class DistributionSpec:
    """A whitelisted family.

    ``exponential`` and ``erlang`` have their standard deviation tied to the
    mean (sd = mean / sqrt(k)), so at finite r they track the mean and only the
    limiting value has to agree with the network's sigma. ``uniform`` holds the
    standard deviation fixed and places the support symmetrically about the
    mean; its lower end must stay positive.
    """

    family: str = "exponential"
    k: int | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unsupported distribution family {self.family!r}; "
                             f"choose one of {FAMILIES}")
        if self.family == "erlang":
            if self.k is None or int(self.k) != self.k or self.k < 1:
                raise ValueError("erlang needs an integer shape k >= 1")
        elif self.k is not None:
            raise ValueError(f"{self.family} takes no shape parameter")

    @classmethod
    def parse(cls, text: str) -> "DistributionSpec":
        """Parse ``"exponential"``, ``"erlang(3)"`` or ``"uniform"``."""
        text = text.strip().lower()
        if text.startswith("erlang"):
            inner = text[len("erlang"):].strip("() ")
            return cls("erlang", int(inner))
        return cls(text)

    def __str__(self) -> str:
        return f"erlang({self.k})" if self.family == "erlang" else self.family

    def sd_at(self, mean: float, sd_limit: float) -> float:
        if self.family == "exponential":
            return mean
        if self.family == "erlang":
            return mean / math.sqrt(self.k)
        return sd_limit

    def consistency_error(self, mean: float, sd: float) -> str | None:
        """Reason why (mean, sd) cannot be matched by this family, or None."""
        if self.family == "exponential" and abs(sd - mean) > _SD_RTOL * mean:
            return f"exponential needs sd == mean ({sd:.6g} vs {mean:.6g})"
        if self.family == "erlang" and abs(sd * math.sqrt(self.k) - mean) > _SD_RTOL * mean:
            return f"erlang({self.k}) needs sd == mean/sqrt(k) ({sd:.6g} vs {mean / math.sqrt(self.k):.6g})"
        if self.family == "uniform" and not mean - math.sqrt(3.0) * sd > 0:
            return f"uniform support would reach 0 (mean {mean:.6g}, sd {sd:.6g})"
        return None

    def sample(self, gen: np.random.Generator, n: int, mean: float, sd_limit: float) -> np.ndarray:
        if self.family == "exponential":
            return mean * gen.standard_exponential(n)
        if self.family == "erlang":
            return (mean / self.k) * gen.standard_gamma(self.k, n)
        half = math.sqrt(3.0) * sd_limit
        lo = mean - half
        return lo + 2.0 * half * gen.random(n)


EXPONENTIAL = DistributionSpec("exponential")


def check_families(spec: NetworkSpec,
                   arrival: Sequence[DistributionSpec],
                   service: Sequence[DistributionSpec],
                   instance: TrafficInstance | None = None) -> list[Violation]:
    """Check that each family can match the network's (mean, sd) targets.

    Limits are checked against ``spec``; when ``instance`` is given the finite-r
    means are checked too (matters for the uniform lower end).
    """
    if len(arrival) != spec.J or len(service) != spec.J:
        raise ValueError("need one arrival and one service family per class")
    out = []
    for j in range(spec.J):
        for kind, fam, rate, sd in (("interarrival", arrival[j], spec.alpha[j], spec.sigma_u[j]),
                                    ("job size", service[j], spec.beta[j], spec.sigma_v[j])):
            msg = fam.consistency_error(1.0 / rate, sd)
            if msg is None and instance is not None and fam.family == "uniform":
                rate_r = (instance.alpha_r if kind == "interarrival" else instance.beta_r)[j]
                msg = fam.consistency_error(1.0 / rate_r, sd)
            if msg:
                out.append(Violation("moment", j, f"class {j + 1} {kind}: {msg}"))
    return out


class VariateStreams:
    """Per-class, per-kind variate buffers from counter-based generators.

    Stream (class j, kind) is seeded from ``SeedSequence(seed, spawn_key=(j, kind))``
    with a Philox bit generator, so the same seed yields the same underlying
    uniforms regardless of policy or traffic parameter (common random
    numbers). Variates are produced in fixed-size blocks that both the Python
    stepper and the compiled event loop consume.
    """

    def __init__(self, instance: TrafficInstance,
                 arrival: Sequence[DistributionSpec],
                 service: Sequence[DistributionSpec],
                 seed: int, block: int = 4096):
        spec = instance.spec
        J = spec.J
        self.block = int(block)
        self._families = (list(arrival), list(service))
        self._means = (1.0 / instance.alpha_r, 1.0 / instance.beta_r)
        self._sds = (spec.sigma_u, spec.sigma_v)
        self._gens = [[np.random.Generator(np.random.Philox(
            np.random.SeedSequence(int(seed), spawn_key=(j, kind)))) for j in range(J)]
            for kind in (ARRIVAL, SERVICE)]
        self.buf = np.empty((2, J, self.block))
        self.pos = np.zeros((2, J), dtype=np.int64)
        for kind in (ARRIVAL, SERVICE):
            for j in range(J):
                self.refill(kind, j)

    def refill(self, kind: int, j: int) -> None:
        fam = self._families[kind][j]
        x = fam.sample(self._gens[kind][j], self.block, self._means[kind][j], self._sds[kind][j])
        if not np.all(x > 0):
            raise RuntimeError(f"nonpositive variate from {fam} (class {j + 1})")
        self.buf[kind, j, :] = x
        self.pos[kind, j] = 0

    def next(self, kind: int, j: int) -> float:
        if self.pos[kind, j] >= self.block:
            self.refill(kind, j)
        x = self.buf[kind, j, self.pos[kind, j]]
        self.pos[kind, j] += 1
        return float(x)
