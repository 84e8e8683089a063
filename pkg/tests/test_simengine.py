import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import paper_tables
from rsn_hgi.config import builtin_network
from rsn_hgi.distributions import ARRIVAL, DistributionSpec
from rsn_hgi.kernel import synthesize
from rsn_hgi.model import make_instance
from rsn_hgi.simengine import (ARRIVAL_EV, DEPARTURE_EV, END_EV, InitialCondition, InvariantViolation, SimConfig,
                               initial_state, policy_rate, run, run_baseline, run_python, step)


def make_cfg(spec, r=16, horizon=200.0, seed=1, tables=None, q0=None, **kw):
    tables = tables if tables is not None else synthesize(spec)
    init = InitialCondition(np.array(q0 if q0 is not None else [0] * spec.J))
    return SimConfig(make_instance(spec, r), tables, kw.pop("c1", 1.0), kw.pop("c2", 2.0),
                     kw.pop("kappa", 0.2), horizon, seed=seed, init=init, **kw)


class FixedStreams:
    """Deterministic variates: constant interarrival and job size per kind."""

    def __init__(self, arrival, service):
        self.values = {ARRIVAL: arrival}
        self.service = service

    def next(self, kind, j):
        return self.values.get(kind, self.service)


# policy_rate


def test_paper_rate_at_full_load(lln):
    cfg = make_cfg(lln, tables=paper_tables(lln))
    q = np.full(3, 100)
    b = policy_rate(q, np.zeros(3), cfg)
    np.testing.assert_allclose(b, [4 / 3, 4 / 3, 2 / 3], atol=1e-12)
    np.testing.assert_allclose(lln.K @ b, lln.C, atol=1e-12)


def test_excursion_halts_service(lln):
    cfg = make_cfg(lln)
    b = policy_rate(np.full(3, 100), np.array([1, 0, 0]), cfg)
    assert b[0] == 0.0 and b[1] > 0


def test_trivial_variant_has_no_vc_term(lln_trivial):
    tables = synthesize(lln_trivial)
    cfg = make_cfg(lln_trivial, tables=tables)
    b = policy_rate(np.full(3, 100), np.zeros(3), cfg)
    np.testing.assert_allclose(b, lln_trivial.rho - tables.vb[(0, 0, 0)], atol=1e-15)


def test_rate_floor_when_serving(lln):
    cfg = make_cfg(lln)
    tab = cfg.allocation_table
    assert (tab >= lln.rho_star / 4).all()
    assert (lln.K @ tab.T <= lln.C[:, None] + 1e-12).all()


# config validation


@pytest.mark.parametrize("kw, msg", [
    (dict(c1=2.0, c2=1.0), "c1 < c2"),
    (dict(c1=0.0), "c1 > 0"),
    (dict(kappa=0.3), "kappa"),
    (dict(horizon=-1.0), "horizon"),
    (dict(c1=1.0, c2=1.2), "too close"),
    (dict(r=2.0), "too small"),
])
def test_config_rejections(lln, kw, msg):
    with pytest.raises(ValueError, match=msg):
        make_cfg(lln, **kw)


def test_inconsistent_initial_excursion(lln):
    cfg = make_cfg(lln)
    with pytest.raises(ValueError, match="excursion"):
        cfg.replace(init=InitialCondition(np.array([50, 0, 0]), e0=np.array([1, 0, 0])))
    with pytest.raises(ValueError, match="residual service"):
        InitialCondition(np.array([0, 0, 0]), residual_service=np.array([1.0, 0, 0]))


def test_family_mismatch_rejected(lln):
    with pytest.raises(ValueError, match="erlang"):
        make_cfg(lln, arrival=[DistributionSpec("erlang", 2)] * 3)


def test_capacity_violation_is_hard_error(lln):
    tables = synthesize(lln)
    vb = {z: v - 0.5 for z, v in tables.vb.items()}
    bad = type(tables)(tables.basis, tables.M_set, tables.vc, vb, tables.lambda_c, tables.lambda_tilde,
                       tables.rho_star)
    with pytest.raises(InvariantViolation):
        make_cfg(lln, tables=bad)


# step


def single_class_cfg(q0, horizon=10.0):
    spec = builtin_network("single")
    return make_cfg(spec, r=16, horizon=horizon, q0=q0)


def test_single_class_hand_simulation():
    cfg = single_class_cfg([5], horizon=50.0)
    assert cfg.lo == pytest.approx(16**0.2) and cfg.hi == pytest.approx(2 * 16**0.2)
    streams = FixedStreams(arrival=100.0, service=1.0)
    s = initial_state(cfg, streams)
    assert s.e[0] == 0 and s.head_residual[0] == 1.0 and s.next_arrival[0] == 100.0
    # q >= hi: full rate 1; q < hi: rate 1 - |vb| = 0.75
    expected = [(1.0, 4, 0), (2.0, 3, 0), (2.0 + 4 / 3, 2, 0), (2.0 + 8 / 3, 1, 1)]
    for t, q, e in expected:
        s, ev = step(s, cfg, streams)
        assert ev.kind == DEPARTURE_EV
        assert s.t == pytest.approx(t, rel=1e-8)
        assert (s.q[0], s.e[0]) == (q, e)
    # e=1 halts service; nothing else happens before the horizon
    s, ev = step(s, cfg, streams)
    assert ev.kind == END_EV and s.t == 50.0 and s.q[0] == 1
    np.testing.assert_allclose(s.B_cum, [4.0], rtol=1e-8)


def test_hysteresis_flip(lln):
    cfg = make_cfg(lln, r=16)
    lo_ceil = int(np.ceil(cfg.lo))
    streams = FixedStreams(arrival=1e9, service=0.01)
    s = initial_state(cfg, streams)
    s.q[:] = [lo_ceil, 50, 50]
    s.e[:] = 0
    s.head_residual[:] = [0.01, 1e3, 1e3]
    s, ev = step(s, cfg, streams, horizon=1e6)
    assert ev.kind == DEPARTURE_EV and ev.cls == 0
    assert s.q[0] == lo_ceil - 1 and s.e[0] == 1
    # class 1 is no longer served; refill to the upper threshold reopens it
    assert policy_rate(s.q, s.e, cfg)[0] == 0.0
    s.q[0] = int(np.ceil(cfg.hi)) - 1
    s.next_arrival[0] = s.t + 1.0
    s, ev = step(s, cfg, streams, horizon=1e6)
    assert (ev.kind, ev.cls) == (ARRIVAL_EV, 0)
    assert s.q[0] >= cfg.hi and s.e[0] == 0


def test_horizon_end_with_no_activity():
    cfg = single_class_cfg([0], horizon=5.0)
    streams = FixedStreams(arrival=100.0, service=1.0)
    s = initial_state(cfg, streams)
    s, ev = step(s, cfg, streams)
    assert ev.kind == END_EV and s.t == 5.0


# run


def test_zero_horizon(lln):
    traj = run(make_cfg(lln, horizon=0.0, q0=[3, 0, 1]))
    assert traj.n_segments == 0
    np.testing.assert_array_equal(traj.q_end, [3, 0, 1])
    np.testing.assert_array_equal(traj.q0, [3, 0, 1])


def test_deterministic(lln):
    a = run(make_cfg(lln, seed=5))
    b = run(make_cfg(lln, seed=5))
    for name in ("times", "q", "b", "e", "event", "event_class"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
    c = run(make_cfg(lln, seed=6))
    assert not np.array_equal(a.times[:10], c.times[:10])


def test_python_and_compiled_agree(lln):
    cfg = make_cfg(lln, r=8, horizon=300.0, seed=3, q0=[4, 7, 2])
    a, b = run(cfg), run_python(cfg)
    for name in ("times", "q", "b", "e", "event", "event_class", "q_end", "n_arrivals", "B_end"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
    base_a, base_b = run_baseline(cfg), run_python(cfg, policy=False)
    np.testing.assert_array_equal(base_a.times, base_b.times)
    np.testing.assert_array_equal(base_a.q, base_b.q)


def _check_trajectory(traj, spec):
    assert (np.diff(traj.times) > 0).all()
    assert (traj.q >= 0).all() and (traj.q_end >= 0).all()
    np.testing.assert_array_equal(traj.n_arrivals - traj.n_departures, traj.q_end - traj.q0)
    assert (traj.b @ spec.K.T <= spec.C + 1e-12).all()
    assert (traj.b >= 0).all()
    B = traj.B_at_starts()
    assert (np.diff(B, axis=0) >= 0).all() and not B[0].any()
    np.testing.assert_allclose(B[-1], traj.B_end, rtol=1e-9)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**63 - 1), r=st.sampled_from([4.0, 8.0, 16.0, 32.0]))
def test_safety_invariants(seed, r):
    lln = builtin_network("2lln")
    cfg = make_cfg(lln, r=r, horizon=100.0 * r, seed=seed, q0=[2, 0, 5])
    traj = run(cfg)
    _check_trajectory(traj, lln)
    # excursion halts service
    assert (traj.b[traj.e == 1] == 0).all()
    # policy rate reproduces every segment
    for k in range(0, traj.n_segments, max(1, traj.n_segments // 50)):
        np.testing.assert_array_equal(traj.b[k], policy_rate(traj.q[k], traj.e[k], cfg))
    # full capacity when the workload is large and no class at i is on excursion
    Wi = traj.q @ (lln.K / cfg.instance.beta_r[None, :]).T / r
    thresh = 2 * lln.J * cfg.c2 * r ** (cfg.kappa - 1)
    blocked = (traj.e[:, None, :] * lln.K[None, :, :]).any(axis=2)
    mask = (Wi >= thresh) & ~blocked
    load = traj.b @ lln.K.T
    assert np.abs((load - lln.C)[mask]).max(initial=0.0) <= 1e-12


def test_baseline_invariants(lln):
    cfg = make_cfg(lln, horizon=2000.0, seed=2)
    traj = run_baseline(cfg)
    _check_trajectory(traj, lln)
    assert traj.policy_name == "nominal"
    np.testing.assert_array_equal(traj.b, np.where(traj.q > 0, lln.rho, 0.0))
    with pytest.raises(ValueError):
        run_baseline(cfg, "priority")


def _delta(cfg):
    """min over near-empty, non-excursion states of alpha^r_j - beta^r_j b_j."""
    inst = cfg.instance
    spec = inst.spec
    out = np.inf
    for idx, x in enumerate(cfg.allocation_table):
        z = np.array([(idx >> j) & 1 for j in range(spec.J)])
        for j in np.flatnonzero(z):
            out = min(out, inst.alpha_r[j] - inst.beta_r[j] * x[j])
    return out


def test_near_empty_classes_drain_slower_than_they_fill(lln):
    # the margin is |vb| - beta_bar/r to first order: positive only once r is large
    assert _delta(make_cfg(lln, r=1000.0)) > 0
    assert _delta(make_cfg(lln, r=32.0)) < 0


def test_trajectory_csv(lln, tmp_path):
    traj = run(make_cfg(lln, horizon=20.0))
    p = tmp_path / "traj.csv"
    traj.to_csv(p)
    with open(p) as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["t_start", "t_end", "q_1", "q_2", "q_3", "b_1", "b_2", "b_3", "e_1", "e_2", "e_3",
                       "event_type", "event_class"]
    assert len(rows) == traj.n_segments + 1
    assert rows[-1][-2:] == ["end", ""]
    assert float(rows[1][1]) == traj.times[1]


def test_other_families_run():
    spec = builtin_network("2lln").with_(sigma_u=[1 / np.sqrt(2)] * 3, sigma_v=[0.3] * 3)
    cfg = make_cfg(spec, r=8, horizon=500.0, arrival=[DistributionSpec("erlang", 2)] * 3,
                   service=[DistributionSpec("uniform")] * 3)
    traj = run(cfg)
    _check_trajectory(traj, spec)
    rate = traj.n_arrivals.sum() / traj.horizon
    assert rate == pytest.approx(3 * cfg.instance.alpha_r[0], rel=0.1)
