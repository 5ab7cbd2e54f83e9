import csv

import numpy as np
import pytest

from collabdp.bounds import BoundInputs, bound_convex_sgd
from collabdp.bound_checks import solve_optimum
from collabdp.data import NodePartition, make_logistic_task, partition
from collabdp.dp_sgd import (Alg1Config, GlobalRegistry, NodeScheduler, Schedule, alg1_step,
                             average_risk_along, noisy_gradient_step, run_alg1, schedule_eta,
                             write_trajectory_csv)
from collabdp.linalg import RngStream
from collabdp.losses import LossParams, mean_loss
from collabdp.privacy import PrivacyLedger, PrivacySpec, PrivacyViolation
from oracles import projected_sgd


def test_schedule_examples():
    assert schedule_eta("constant", 7, eta=0.1) == 0.1
    assert schedule_eta("strongly_convex", 1, gamma=1e-4) == pytest.approx(20000.0)
    assert schedule_eta("strongly_convex", 2, gamma=1e-4) == schedule_eta("strongly_convex", 1, gamma=1e-4) / 2
    assert schedule_eta("adaptive", 4, gamma=0.5, a=0.5) == pytest.approx(1.0)
    assert schedule_eta("inv_sqrt", 4) == 0.5
    with pytest.raises(ValueError):
        schedule_eta("strongly_convex", 1, gamma=0.0)
    with pytest.raises(ValueError):
        schedule_eta("constant", 0)
    with pytest.raises(ValueError):
        schedule_eta("nope", 1)
    assert Schedule("inv_sqrt", eta_max=0.2)(1) == 0.2


def test_huge_first_step_is_caught_by_projection():
    task = make_logistic_task(50, 3, seed=1)
    params = LossParams(1e-4, 1e4)
    w, _ = noisy_gradient_step(np.zeros(3), task.X[:5], task.y[:5],
                               schedule_eta("strongly_convex", 1, gamma=1e-4), params, None, None)
    assert np.linalg.norm(w) <= params.radius + 1e-9
    assert np.linalg.norm(w) > 100


def _single_node(n):
    return NodePartition([np.arange(n)], n, n)


def test_noiseless_single_node_b1_matches_oracle_bitwise():
    task = make_logistic_task(200, 4, seed=3)
    params = LossParams(0.0, 50.0)
    cfg = Alg1Config(1, 1, Schedule("constant", eta=0.1), None, params, seed=9)
    res = run_alg1(task, _single_node(200), cfg)
    order = RngStream(9).child("perm", 0).permutation(np.arange(200))
    final, traj = projected_sgd(task.X, task.y, order, 1, lambda t: 0.1, 0.0, 50.0)
    assert np.array_equal(res.final, final)
    assert np.array_equal(res.trajectory, np.array(traj))


def test_noiseless_minibatch_and_active_projection_match_oracle():
    task = make_logistic_task(200, 5, seed=4)
    params = LossParams(0.5, 0.3)
    cfg = Alg1Config(1, 7, Schedule("strongly_convex", gamma=0.5), None, params, seed=2)
    res = run_alg1(task, _single_node(200), cfg)
    order = RngStream(2).child("perm", 0).permutation(np.arange(200))
    final, traj = projected_sgd(task.X, task.y, order, 7, lambda t: 2 / (0.5 * t), 0.5, 0.3)
    np.testing.assert_allclose(res.trajectory, np.array(traj), rtol=1e-12, atol=1e-14)
    assert res.T == 29
    assert res.steps[-1].batch_size == 200 - 28 * 7


def test_multi_node_round_robin_equals_interleaved_oracle():
    task = make_logistic_task(120, 3, seed=5)
    part = partition(120, 3, 40, RngStream(1))
    cfg = Alg1Config(3, 4, Schedule("constant", eta=0.2), None, LossParams(0.0, 50.0), seed=6)
    res = run_alg1(task, part, cfg)
    orders = [RngStream(6).child("perm", m).permutation(part.nodes[m]) for m in range(3)]
    interleaved = np.concatenate([orders[m][k:k + 4] for k in range(0, 40, 4) for m in range(3)])
    final, _ = projected_sgd(task.X, task.y, interleaved, 4, lambda t: 0.2, 0.0, 50.0)
    np.testing.assert_allclose(res.final, final, rtol=1e-12, atol=1e-14)
    assert [s.node for s in res.steps[:6]] == [0, 1, 2, 0, 1, 2]


def test_zero_gradient_zero_noise_leaves_model():
    class Flat:
        X = np.zeros((4, 2))
        y = np.ones(4)
    reg = GlobalRegistry(np.zeros(2))
    cfg = Alg1Config(1, 2, Schedule("constant", eta=0.1), None, LossParams(0.0, 5.0))
    # x = 0 makes every per-sample gradient zero when lambda = 0
    alg1_step(reg, 0, np.array([0, 1]), Flat, cfg, PrivacyLedger(), None)
    assert np.array_equal(reg.w, np.zeros(2))
    assert reg.t == 1 and reg.last_updater == 0


def test_registry_counter_and_ledger():
    task = make_logistic_task(90, 3, seed=7)
    part = partition(90, 3, 30, RngStream(2))
    cfg = Alg1Config(3, 7, Schedule("constant"), PrivacySpec(0.5, 1e-4), LossParams(), seed=1)
    res = run_alg1(task, part, cfg)
    assert [s.step for s in res.steps] == list(range(1, res.T + 1))
    assert res.T == 3 * 5
    assert set(res.ledger.counts.values()) == {1} and len(res.ledger.counts) == 90
    assert sum(s.batch_size for s in res.steps) == 90
    # remainder batches of size 2 use b' = 2 in the sensitivity
    small = [s for s in res.steps if s.batch_size == 2]
    full = [s for s in res.steps if s.batch_size == 7]
    assert small and small[0].sigma == pytest.approx(full[0].sigma * 7 / 2)


def test_seeded_noisy_runs_are_bit_identical():
    task = make_logistic_task(100, 4, seed=8)
    part = partition(100, 2, 50, RngStream(3))
    cfg = Alg1Config(2, 5, Schedule("constant"), PrivacySpec(0.5, 1e-4), LossParams(), seed=11)
    a, b = run_alg1(task, part, cfg), run_alg1(task, part, cfg)
    assert np.array_equal(a.trajectory, b.trajectory)
    c = run_alg1(task, part, Alg1Config(2, 5, Schedule("constant"), PrivacySpec(0.5, 1e-4),
                                        LossParams(), seed=12))
    assert not np.array_equal(a.final, c.final)


def test_double_use_raises():
    task = make_logistic_task(10, 2, seed=0)
    reg = GlobalRegistry(np.zeros(2))
    led = PrivacyLedger()
    cfg = Alg1Config(1, 2, Schedule(), None, LossParams())
    alg1_step(reg, 0, np.array([0, 1]), task, cfg, led, None)
    with pytest.raises(PrivacyViolation):
        alg1_step(reg, 0, np.array([1, 2]), task, cfg, led, None)


def test_random_scheduler_only_picks_live_nodes():
    s = NodeScheduler("random", 4, RngStream(0))
    picks = {s.pick([False, True, False, True]) for _ in range(200)}
    assert picks == {1, 3}
    assert s.pick([False] * 4) is None
    with pytest.raises(ValueError):
        NodeScheduler("fifo", 2, RngStream(0))


def test_average_iterate_within_constant_step_bound():
    n, d = 1000, 4
    task = make_logistic_task(n, d, seed=2)
    params = LossParams(0.0, 5.0)
    f_star = mean_loss(solve_optimum(task, params), task.X, task.y, 0.0)
    gaps = []
    for s in range(1, 6):
        cfg = Alg1Config(5, 10, Schedule("constant", eta=0.1), PrivacySpec(0.5, 1 / n ** 2), params, seed=s)
        res = run_alg1(task, partition(n, 5, 200, RngStream(s)), cfg)
        gaps.append(average_risk_along(res.trajectory, task, params) - f_star)
    bound = bound_convex_sgd(BoundInputs(R=5.0, L=1.0, B=1.0, b=10, n=n, T=100, eta=0.1, epsilon=0.5,
                                   delta=1 / n ** 2))
    assert 0 <= np.median(gaps) <= bound


def test_risk_improves_with_epsilon_in_median():
    n = 1000
    task = make_logistic_task(n, 4, seed=6)
    params = LossParams(0.0, 5.0)
    med = []
    for eps in (0.1, 0.999):
        risks = []
        for s in range(1, 8):
            cfg = Alg1Config(2, 5, Schedule("constant"), PrivacySpec(eps, 1 / n ** 2), params, seed=s)
            res = run_alg1(task, partition(n, 2, 500, RngStream(s)), cfg)
            risks.append(average_risk_along(res.trajectory, task, params))
        med.append(np.median(risks))
    assert med[1] < med[0]


def test_trajectory_csv(tmp_path):
    task = make_logistic_task(20, 2, seed=0)
    res = run_alg1(task, _single_node(20), Alg1Config(1, 5, Schedule(), None, LossParams()))
    path = tmp_path / "traj.csv"
    write_trajectory_csv(path, res.steps, [1.0, 2.0, 3.0, 4.0])
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["step", "node", "eta", "sigma", "train_loss_snapshot_optional"]
    assert len(rows) == 5 and rows[1][:2] == ["1", "0"]
