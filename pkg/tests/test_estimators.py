import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rsn_hgi.config import builtin_network
from rsn_hgi.cost import HhatVertices
from rsn_hgi.estimators import (ScaledView, discount_truncation_bound, discounted_cost, ergodic_cost,
                                hgi_gap_series, idleness_metric, mean_gap, summarize, write_estimates_csv)
from rsn_hgi.kernel import synthesize
from rsn_hgi.model import make_instance
from rsn_hgi.simengine import (ARRIVAL_EV, END_EV, InitialCondition, SimConfig, Trajectory, policy_rate,
                               run)


def make_cfg(spec, r=4.0, horizon=100.0, seed=0, init=None):
    return SimConfig(make_instance(spec, r), synthesize(spec), 1.0, 2.0, 0.2, horizon, seed=seed,
                     init=init or InitialCondition.empty(spec.J))


def synthetic(cfg, scaled_times, Qhat, e=None):
    """Trajectory with given scaled breakpoints and scaled queue levels per segment."""
    r = cfg.instance.r
    J = cfg.instance.spec.J
    Qhat = np.asarray(Qhat, dtype=float).reshape(-1, J)
    q = np.rint(Qhat * r).astype(np.int32)
    n = q.shape[0]
    e = np.zeros((n, J), dtype=np.int8) if e is None else np.asarray(e, dtype=np.int8)
    b = np.array([policy_rate(q[k], e[k], cfg) for k in range(n)]).reshape(n, J)
    times = np.asarray(scaled_times, dtype=float) * r**2
    dur = np.diff(times)
    return Trajectory(
        cfg=cfg, times=times, q=q, b=b, e=e,
        event=np.full(n, ARRIVAL_EV, dtype=np.int8), event_class=np.zeros(n, dtype=np.int16),
        q0=q[0].copy() if n else np.zeros(J, np.int64), e0=e[0].copy() if n else np.zeros(J, np.int8),
        q_end=q[-1].copy() if n else np.zeros(J, np.int64),
        n_arrivals=np.zeros(J, np.int64), n_departures=np.zeros(J, np.int64),
        B_end=(b * dur[:, None]).sum(axis=0),
    )


@pytest.fixture
def single():
    return make_cfg(builtin_network("single"))


def test_discounted_constant_and_zero(single):
    T = 40.0
    traj = synthetic(single, [0.0, T], [[2.0]])
    assert discounted_cost(traj, 0.5) == pytest.approx(2.0 * (1 - math.exp(-0.5 * T)) / 0.5, rel=1e-12)
    # the tail bound is exact for a constant path
    tail = 2.0 / 0.5 - discounted_cost(traj, 0.5)
    assert discount_truncation_bound(traj, 0.5) == pytest.approx(tail, rel=1e-6)
    assert discounted_cost(synthetic(single, [0.0, T], [[0.0]]), 1.0) == 0.0


def test_discounted_two_segments(single):
    traj = synthetic(single, [0.0, 1.0, 50.0], [[1.0], [0.0]])
    assert discounted_cost(traj, 1.0) == pytest.approx(1 - math.exp(-1.0), rel=1e-12)


def test_discounted_rejections(single):
    traj = synthetic(single, [0.0, 2.0], [[1.0]])
    with pytest.raises(ValueError):
        discounted_cost(traj, 0.0)
    with pytest.raises(ValueError, match="horizon too short"):
        discounted_cost(traj, 1.0, tol=1e-6)


def test_ergodic_examples(single):
    assert ergodic_cost(synthetic(single, [0.0, 3.0], [[2.0]])) == pytest.approx(2.0)
    assert ergodic_cost(synthetic(single, [0.0, 3.0], [[0.0]])) == 0.0
    traj = synthetic(single, [0.0, 1.0, 2.0], [[1.0], [3.0]])
    assert ergodic_cost(traj, 2.0) == pytest.approx(2.0)
    assert ergodic_cost(traj, 1.5) == pytest.approx((1.0 + 1.5) / 1.5)
    with pytest.raises(ValueError):
        ergodic_cost(traj, 3.0)
    with pytest.raises(ValueError):
        ergodic_cost(traj, 0.0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), varsigma=st.floats(0.1, 3.0))
def test_costs_match_dense_riemann_sum(seed, varsigma):
    rng = np.random.default_rng(seed)
    lln = builtin_network("2lln")
    cfg = make_cfg(lln)
    step = 1e-4
    n = int(rng.integers(1, 12))
    cuts = np.sort(rng.choice(np.arange(1, 20000), size=n, replace=False))
    ticks = np.concatenate([[0], cuts, [20001]])
    Qhat = rng.integers(0, 40, (n + 1, 3)) / cfg.instance.r
    traj = synthetic(cfg, ticks * step, Qhat)
    grid = (np.arange(ticks[-1]) + 0.5) * step
    seg = np.searchsorted(ticks * step, grid, side="right") - 1
    hq = Qhat[seg] @ lln.h
    T = ticks[-1] * step
    assert ergodic_cost(traj) == pytest.approx(hq.sum() * step / T, abs=1e-6)
    assert discounted_cost(traj, varsigma) == pytest.approx((np.exp(-varsigma * grid) * hq).sum() * step,
                                                          abs=1e-6)


def test_scaled_identity_with_residuals():
    lln = builtin_network("2lln")
    init = InitialCondition(np.array([3, 5, 1]), residual_arrival=np.array([0.7, 0.0, 2.5]),
                            residual_service=np.array([0.4, 1.3, 0.0]))
    traj = run(make_cfg(lln, r=8.0, horizon=64 * 5.0, seed=11, init=init))
    view = ScaledView(traj)
    lhs = view.W_boundaries
    rhs = view.w0[None, :] + view.X() + view.U
    assert np.abs(lhs - rhs).max() <= 1e-8
    assert (view.W >= 0).all()
    assert (np.diff(view.U, axis=0) >= -1e-12).all()


def test_gap_nonnegative_on_simulated_path():
    traj = run(make_cfg(builtin_network("2lln"), r=16.0, horizon=256 * 3.0, seed=4))
    _, gap = hgi_gap_series(traj)
    assert gap.min() >= -1e-9
    assert mean_gap(traj) >= 0


def test_gap_examples():
    lln = builtin_network("2lln")
    cfg = make_cfg(lln)
    traj = synthetic(cfg, [0.0, 1.0, 2.0], [[1.0, 2.0, 0.0], [0.0, 0.0, 1.0]])
    _, gap = hgi_gap_series(traj)
    np.testing.assert_allclose(gap, [1.0, 0.0], atol=1e-12)
    # mixing M^r in the workload with M in hhat: 3 - max(0.8, 1.6), an O(1/r) shift
    _, gap_lim = hgi_gap_series(traj, HhatVertices(lln))
    assert gap_lim[0] == pytest.approx(1.4, abs=1e-12)
    triv = builtin_network("2lln-trivial")
    traj = synthetic(make_cfg(triv), [0.0, 1.0], [[1.0, 2.0, 3.0]])
    np.testing.assert_allclose(hgi_gap_series(traj)[1], [0.0], atol=1e-12)


def test_idleness_examples():
    lln = builtin_network("2lln")
    cfg = make_cfg(lln)
    level = 2 * 3 * 2.0 * 4.0 ** (0.2 - 1)
    big = [[10.0, 10.0, 10.0]]
    # no excursion: full capacity, no idleness
    traj = synthetic(cfg, [0.0, 1.0], big)
    np.testing.assert_array_equal(idleness_metric(traj), [0.0, 0.0])
    # class 1 blocked for 0.5 time units while resource 1 has workload above the level
    traj = synthetic(cfg, [0.0, 1.0, 1.5], big * 2, e=[[0, 0, 0], [1, 0, 0]])
    assert ScaledView(traj).W.min() > level
    np.testing.assert_allclose(idleness_metric(traj), [0.5, 0.0], atol=1e-12)
    np.testing.assert_allclose(idleness_metric(traj, fraction=True), [1 / 3, 0.0], atol=1e-12)
    # every class blocked: both resources idle for the full duration
    traj = synthetic(cfg, [0.0, 2.0], big, e=[[1, 1, 1]])
    np.testing.assert_allclose(idleness_metric(traj), [2.0, 2.0], atol=1e-12)


def test_zero_horizon_estimates():
    cfg = make_cfg(builtin_network("2lln"), horizon=0.0)
    traj = run(cfg)
    assert discounted_cost(traj, 1.0) == 0.0
    np.testing.assert_array_equal(idleness_metric(traj, fraction=True), [0.0, 0.0])
    assert hgi_gap_series(traj)[1].size == 0


def test_summarize_and_csv(tmp_path):
    est = summarize([1.0, 2.0, 3.0], horizon=5.0)
    assert est.value == 2.0 and est.std_error == pytest.approx(1 / math.sqrt(3))
    assert summarize([4.0], 1.0).std_error == 0.0
    with pytest.raises(ValueError):
        summarize([], 1.0)
    p = tmp_path / "est.csv"
    write_estimates_csv(p, [(8, 1, "J_E", 0.1), (4, 0, "J_E", 1 / 3)])
    rows = list(csv.reader(open(p)))
    assert rows[0] == ["r", "replication", "metric", "value"]
    assert rows[1] == ["4.0", "0", "J_E", repr(1 / 3)]
    assert rows[2][0] == "8.0"


def test_end_event_marks_last_segment():
    traj = run(make_cfg(builtin_network("2lln"), horizon=50.0))
    assert traj.event[-1] == END_EV
