import numpy as np
import pytest

from simplex_flows.coords import SimplexPoint
from simplex_flows.descent import DescentSpec, run
from simplex_flows.empirical import (Dataset, SgdSchedule, convergence_time,
                                     empirical_kl, empirical_target,
                                     run_empirical, sample_dataset)
from simplex_flows.errors import ZeroCount
from simplex_flows.flows import Trajectory
from simplex_flows.geometry import kl
from simplex_flows.rng import make_rng, random_simplex_point


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.array([1.5, 2.5]))            # not integers
    with pytest.raises(ValueError):
        Dataset(np.array([-1, 2]))
    with pytest.raises(ValueError):
        Dataset(np.array([0, 0]))
    d = Dataset(np.array([3, 4, 5]))
    assert d.total == 12 and d.n == 2


def test_sample_dataset_reproducible():
    q = random_simplex_point(make_rng(0), 3)
    d1 = sample_dataset(q, 1000, seed=5)
    d2 = sample_dataset(q, 1000, seed=5)
    assert np.array_equal(d1.counts, d2.counts)
    assert d1.total == 1000


def test_empirical_target_and_zero_count():
    d = Dataset(np.array([10, 20, 70]))
    q_hat = empirical_target(d)
    assert np.allclose(q_hat.probs, [0.1, 0.2, 0.7])
    with pytest.raises(ZeroCount):
        empirical_target(Dataset(np.array([5, 0, 5])))


def test_empirical_kl_is_gap_to_qhat():
    d = Dataset(np.array([25, 25, 50]))
    p = SimplexPoint(np.array([0.3, 0.3, 0.4]))
    assert empirical_kl(d, p) == pytest.approx(kl(empirical_target(d), p),
                                               abs=1e-14)


def test_full_batch_is_bit_identical_to_descent():
    rng = make_rng(1)
    q = random_simplex_point(rng, 3)
    d = sample_dataset(q, 10000, seed=2)
    q_hat = empirical_target(d)
    p0 = random_simplex_point(rng, 3)
    spec = DescentSpec("gd_theta", "nonlinear", q_hat, p0, 0.3, max_iters=40)
    emp = run_empirical(spec, d)
    ref = run(spec)
    assert np.array_equal(emp.states, ref.states)
    assert np.array_equal(emp.loss_gaps, ref.kl_values)


def test_run_empirical_checks_target():
    rng = make_rng(2)
    q = random_simplex_point(rng, 2)
    d = sample_dataset(q, 1000, seed=0)
    spec = DescentSpec("ngd", "nonlinear", q, q, 0.5)   # target is q, not q_hat
    with pytest.raises(ValueError):
        run_empirical(spec, d)


def test_true_kl_plateaus_at_dataset_gap():
    # descent drives the gap to q_hat to zero while the KL to the true q
    # plateaus at the irreducible D(q||q_hat)
    rng = make_rng(3)
    q = random_simplex_point(rng, 2)
    d = sample_dataset(q, 5000, seed=1)
    q_hat = empirical_target(d)
    p0 = random_simplex_point(rng, 2)
    spec = DescentSpec("ngd", "nonlinear", q_hat, p0, 0.9, max_iters=200)
    traj = run_empirical(spec, d, true_target=q)
    assert traj.loss_gaps[-1] < 1e-10
    assert traj.kl_values[-1] == pytest.approx(kl(q, q_hat), abs=1e-8)


def test_minibatch_gradient_is_unbiased():
    # the mean minibatch frequency over many draws approaches q_hat
    rng = make_rng(4)
    q = random_simplex_point(rng, 3)
    d = sample_dataset(q, 50000, seed=7)
    q_hat = empirical_target(d)
    draw_rng = make_rng(8)
    size, reps = 64, 3000
    acc = np.zeros(d.n + 1)
    for _ in range(reps):
        acc += draw_rng.multivariate_hypergeometric(d.counts, size) / size
    assert np.abs(acc / reps - q_hat.probs).max() < 0.02 * q_hat.probs.max()


def test_minibatch_run_approaches_qhat():
    rng = make_rng(5)
    q = random_simplex_point(rng, 2)
    d = sample_dataset(q, 100000, seed=3)
    q_hat = empirical_target(d)
    p0 = random_simplex_point(rng, 2)
    spec = DescentSpec("ngd", "nonlinear", q_hat, p0, 0.5, max_iters=300)
    traj = run_empirical(spec, d, minibatch=1000,
                         schedule=SgdSchedule(0.5, decay_a=100.0), seed=11)
    assert traj.loss_gaps[-1] < 0.01
    assert traj.loss_gaps[-1] < traj.loss_gaps[0]


def test_minibatch_survives_missed_outcomes():
    # tiny minibatches routinely miss an outcome; the cross-entropy form of
    # the gradient must stay finite anyway
    rng = make_rng(6)
    q = SimplexPoint(np.array([0.90, 0.05, 0.05]))
    d = sample_dataset(q, 10000, seed=4)
    q_hat = empirical_target(d)
    p0 = random_simplex_point(rng, 2)
    spec = DescentSpec("gd_theta", "nonlinear", q_hat, p0, 0.2, max_iters=100)
    traj = run_empirical(spec, d, minibatch=2, seed=12)
    assert np.all(np.isfinite(traj.states))


def test_run_empirical_argument_validation():
    rng = make_rng(7)
    q = random_simplex_point(rng, 2)
    d = sample_dataset(q, 1000, seed=0)
    q_hat = empirical_target(d)
    spec = DescentSpec("ngd", "nonlinear", q_hat, q, 0.5)
    with pytest.raises(ValueError):
        run_empirical(spec, d, minibatch=0)
    with pytest.raises(ValueError):
        run_empirical(spec, d, minibatch=10 ** 9)
    with pytest.raises(ValueError):
        run_empirical(spec, d, schedule=SgdSchedule(0.5))   # schedule, no minibatch
    lin = DescentSpec("ngd", "linearized", q_hat, q, 0.5)
    with pytest.raises(ValueError):
        run_empirical(lin, d, minibatch=10)


def test_sgd_schedule():
    s = SgdSchedule(0.5, decay_a=1000.0)
    assert s.rate(0) == pytest.approx(0.5)
    assert s.rate(1000) == pytest.approx(0.25)
    with pytest.raises(ValueError):
        SgdSchedule(-0.1)


def _traj_with_gaps(gaps):
    k = np.arange(len(gaps), dtype=float)
    return Trajectory(k, np.zeros((len(gaps), 1)), np.array(gaps),
                      loss_gaps=np.array(gaps))


def test_convergence_time():
    t1 = _traj_with_gaps([1.0, 0.5, 0.05, 0.01])
    t2 = _traj_with_gaps([1.0, 0.02, 0.01, 0.005])
    assert convergence_time([t1, t2], 0.05) == 2      # worst case wins
    assert convergence_time([t2], 0.05) == 1
    assert convergence_time([t1], 1e-9, max_iters=50) == 50   # saturates
    with pytest.raises(ValueError):
        convergence_time([], 0.1)
