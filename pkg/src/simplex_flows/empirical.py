"""Learning from samples: empirical targets, full-batch and minibatch descent.

A dataset is a multinomial count vector drawn from a true distribution q.
The empirical loss is the KL divergence to the empirical distribution
q_hat, so full-batch descent on the empirical loss is exactly descent
toward q_hat and reuses the descent module unchanged.  Minibatch descent
resamples a small sub-dataset each iteration (uniformly from the stored
counts, without replacement) and substitutes its empirical distribution
into the cross-entropy form of the gradient, which stays finite even when
the minibatch misses an outcome.  Convergence is always measured against
q_hat -- the minimizer of what is actually being optimized -- while the KL
to the true q is recorded alongside to show the irreducible gap D(q||q_hat).
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import descent
from .coords import EtaCoord, SimplexPoint, ThetaCoord, to_theta
from .errors import BoundaryEscape, NonFinite, ZeroCount
from .flows import Trajectory
from .geometry import hess_phi_matvec, kl
from .rng import make_rng


@dataclass(frozen=True)
class Dataset:
    """Outcome counts of n_samples i.i.d. categorical draws."""

    counts: np.ndarray

    def __post_init__(self):
        arr = np.array(self.counts)
        if arr.ndim != 1 or arr.size < 2:
            raise ValueError("counts must be a vector over at least two outcomes")
        if not np.issubdtype(arr.dtype, np.integer):
            raise ValueError("counts must be integers")
        if np.any(arr < 0) or arr.sum() < 1:
            raise ValueError("counts must be nonnegative with at least one sample")
        arr = arr.astype(np.int64)
        arr.setflags(write=False)
        object.__setattr__(self, "counts", arr)

    @property
    def total(self):
        return int(self.counts.sum())

    @property
    def n(self):
        return self.counts.size - 1


def sample_dataset(q: SimplexPoint, n_samples: int, seed: int) -> Dataset:
    """Multinomial counts from q, reproducible across platforms by seed."""
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    rng = make_rng(seed)
    return Dataset(rng.multinomial(n_samples, q.probs))


def empirical_target(d: Dataset) -> SimplexPoint:
    """q_hat = counts / total; only defined when every outcome was seen."""
    if np.any(d.counts == 0):
        raise ZeroCount("an outcome has zero observations; q_hat is on the boundary")
    return SimplexPoint(d.counts / d.total)


def empirical_kl(d: Dataset, p: SimplexPoint) -> float:
    """Average negative log-likelihood gap: D(q_hat || p)."""
    return kl(empirical_target(d), p)


@dataclass(frozen=True)
class SgdSchedule:
    """Decaying step size alpha(k) = base_rate * decay_a / (k + decay_a)."""

    base_rate: float
    decay_a: float = 1000.0

    def __post_init__(self):
        if not (self.base_rate > 0 and self.decay_a > 0):
            raise ValueError("schedule parameters must be positive")

    def rate(self, k: int) -> float:
        return self.base_rate * self.decay_a / (k + self.decay_a)


def _check_target_is_qhat(spec, d):
    q_hat = d.counts / d.total
    if spec.target.probs.shape != q_hat.shape or \
            np.abs(spec.target.probs - q_hat).max() > 1e-12:
        raise ValueError("spec.target must be the dataset's empirical distribution")


def run_empirical(spec: descent.DescentSpec, d: Dataset,
                  minibatch: Optional[int] = None,
                  schedule: Optional[SgdSchedule] = None,
                  true_target: Optional[SimplexPoint] = None,
                  seed: int = 0, tol: Optional[float] = None) -> Trajectory:
    """Descend the empirical loss of a dataset.

    Full batch (minibatch=None) delegates to descent.run against q_hat --
    the exact same code path, hence bit-identical states.  With a minibatch
    size, each iteration draws that many samples uniformly from the dataset
    and uses their empirical distribution in the gradient, stepping with
    the schedule (or the spec's constant rate).  The returned trajectory
    carries the loss gap to q_hat in loss_gaps and, when true_target is
    given, the KL from the true q in kl_values (otherwise the gap again).
    """
    _check_target_is_qhat(spec, d)
    if minibatch is None:
        if schedule is not None:
            raise ValueError("schedules apply to minibatch runs only")
        traj = descent.run(spec, tol=tol)
        gaps = traj.kl_values
        if true_target is None:
            kls = gaps
        else:
            kls = np.array([kl(true_target, SimplexPoint(
                descent._state_probs(spec, x))) for x in traj.states])
        return Trajectory(traj.times, traj.states, kls, loss_gaps=gaps)
    if spec.variant != "nonlinear":
        raise ValueError("minibatch descent uses the nonlinear updates")
    if not 1 <= minibatch <= d.total:
        raise ValueError("minibatch size must be between 1 and the dataset size")
    return _run_minibatch(spec, d, minibatch, schedule, true_target, seed, tol)


def _run_minibatch(spec, d, size, schedule, true_target, seed, tol):
    rng = make_rng(seed)
    q_hat = d.counts / d.total
    eta_like = spec.method in ("gd_eta", "ngd")
    x = (spec.init.probs[:-1].copy() if eta_like
         else to_theta(spec.init).theta.copy())

    def probs_of(xv):
        if eta_like:
            return np.append(xv, 1.0 - xv.sum())
        m = max(0.0, xv.max())
        w = np.exp(np.append(xv, 0.0) - m)
        return w / w.sum()

    def gap_of(xv):
        p = probs_of(xv)
        return float(np.dot(q_hat, np.log(q_hat) - np.log(p)))

    def true_kl_of(xv):
        if true_target is None:
            return gap_of(xv)
        return kl(true_target, SimplexPoint(probs_of(xv)))

    states, gaps, kls = [x.copy()], [gap_of(x)], [true_kl_of(x)]
    for k in range(spec.max_iters):
        if tol is not None and gaps[-1] <= tol:
            break
        a = schedule.rate(k) if schedule is not None else spec.learning_rate
        batch_eta = rng.multivariate_hypergeometric(d.counts, size)[:-1] / size
        if spec.method == "gd_eta":
            x = x + a * hess_phi_matvec(EtaCoord(x), batch_eta - x)
        elif spec.method == "ngd":
            x = x - a * (x - batch_eta)
        else:  # gd_theta
            m = max(0.0, x.max())
            w = np.exp(np.append(x, 0.0) - m)
            x = x - a * (w[:-1] / w.sum() - batch_eta)
        if eta_like and not (np.all(x > 0) and x.sum() < 1.0):
            raise BoundaryEscape("minibatch iterate left the simplex")
        if not np.all(np.isfinite(x)):
            raise NonFinite("minibatch iterate overflowed")
        states.append(x.copy())
        gaps.append(gap_of(x))
        kls.append(true_kl_of(x))
    return Trajectory(np.arange(len(states), dtype=float), np.array(states),
                      np.array(kls), loss_gaps=np.array(gaps))


def convergence_time(trajectories, tolerance: float, max_iters: int = 100) -> int:
    """Worst-case iteration count to bring the loss gap within tolerance.

    Each trajectory contributes the first recorded iteration whose gap to
    q_hat is at or below the tolerance, saturating at max_iters if it never
    gets there; the maximum over trajectories is returned.
    """
    if not trajectories:
        raise ValueError("need at least one trajectory")
    worst = 0
    for traj in trajectories:
        gaps = traj.loss_gaps if traj.loss_gaps is not None else traj.kl_values
        hit = np.nonzero(gaps <= tolerance)[0]
        t = int(hit[0]) if hit.size else max_iters
        worst = max(worst, t)
    return worst
