import numpy as np
import pytest

from rsn_hgi.kernel import PolicyTables, all_configs, synthesize
from rsn_hgi.model import NetworkSpec, two_link_linear_network


def random_network(rng: np.random.Generator, I: int | None = None, J: int | None = None) -> NetworkSpec:
    """Random valid network: one local class per resource plus random routes."""
    I = int(rng.integers(1, 5)) if I is None else I
    J = int(rng.integers(I, 9)) if J is None else J
    extra = []
    while len(extra) < J - I:
        col = rng.integers(0, 2, size=I)
        if col.any():
            extra.append(col)
    K = np.column_stack([np.eye(I, dtype=int)] + [c[:, None] for c in extra]) if extra else np.eye(I, dtype=int)
    K = K[:, rng.permutation(J)]
    alpha = rng.uniform(0.5, 2.0, J)
    beta = rng.uniform(0.5, 2.0, J)
    rho = alpha / beta
    return NetworkSpec(
        K=K, C=K @ rho, alpha=alpha, beta=beta,
        alpha_bar=np.zeros(J), beta_bar=rng.uniform(0.5, 1.5, J),
        sigma_u=1.0 / alpha, sigma_v=1.0 / beta,
        h=np.round(rng.uniform(0.5, 3.0, J), 2),
    )


def paper_tables(spec: NetworkSpec | None = None) -> PolicyTables:
    """The hand-built 2LLN tables: v^c = u1/sqrt(3), v^b entries of +-1/36."""
    spec = spec or two_link_linear_network()
    base = synthesize(spec)
    u1 = np.array([-1.0, -1.0, 1.0]) / np.sqrt(3)
    a = 1.0 / 36

    def vb(z):
        z1, z2, z3 = z
        return np.array([
            a * (z1 == 1 or (z2 == 1 and z3 == 0)) - a * (z1 == 0 and z3 == 1),
            a * (z2 == 1 or (z1 == 1 and z3 == 0)) - a * (z2 == 0 and z3 == 1),
            a * (z3 == 1) - a * (z3 == 0 and (z1 == 1 or z2 == 1)),
        ], dtype=float)

    vc = {z: u1 / np.sqrt(3) for z in base.M_set}
    lam_c = {z: float(base.basis.lam * (v @ base.basis.u_last)) for z, v in vc.items()}
    return PolicyTables(base.basis, base.M_set, vc, {z: vb(z) for z in all_configs(3)},
                        lam_c, max(lam_c.values()), spec.rho_star)


@pytest.fixture
def lln():
    return two_link_linear_network()


@pytest.fixture
def lln_trivial():
    return two_link_linear_network(h=(1.0, 1.0, 2.0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
