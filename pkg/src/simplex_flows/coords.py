"""Interior of the probability simplex in three interchangeable parameterizations.

A distribution over n+1 outcomes is stored either as the full probability
vector p (SimplexPoint), as mixture coordinates eta = (p_1, ..., p_n)
(EtaCoord), or as exponential coordinates theta_i = log(p_i / p_{n+1})
(ThetaCoord).  The log-partition function

    psi(theta) = log(1 + sum_i exp(theta_i))

and the negative entropy

    phi(eta) = sum_{i=1}^{n+1} eta_i log eta_i,   eta_{n+1} = 1 - sum eta_i

are convex conjugates of each other: grad psi maps theta to eta and
grad phi maps eta back to theta.  Only the open simplex is representable;
constructors reject boundary and malformed inputs instead of repairing them.
"""

from dataclasses import dataclass

import numpy as np

# Constructors reject rather than renormalize: a probability vector whose sum
# is off by more than this is a caller bug, not noise.
SUM_TOL = 1e-9
# Anything below this is treated as on the boundary (log would underflow).
MIN_PROB = 1e-300


def _readonly_vector(values, name):
    arr = np.array(values, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a 1-d vector, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"{name} must be non-empty")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SimplexPoint:
    """A strictly positive probability vector over n+1 >= 2 outcomes."""

    probs: np.ndarray

    def __post_init__(self):
        arr = _readonly_vector(self.probs, "probs")
        object.__setattr__(self, "probs", arr)
        if arr.size < 2:
            raise ValueError("need at least two outcomes")
        if not np.all(np.isfinite(arr)):
            raise ValueError("probabilities must be finite")
        if np.any(arr < MIN_PROB):
            raise ValueError("probabilities must be strictly positive "
                             f"(min entry {arr.min():g})")
        s = arr.sum()
        if abs(s - 1.0) > SUM_TOL:
            raise ValueError(f"probabilities must sum to 1, got {s!r}")

    @property
    def n(self):
        """Dimension of the simplex (number of outcomes minus one)."""
        return self.probs.size - 1


@dataclass(frozen=True)
class EtaCoord:
    """Mixture coordinates: the first n probabilities of an interior point."""

    eta: np.ndarray

    def __post_init__(self):
        arr = _readonly_vector(self.eta, "eta")
        object.__setattr__(self, "eta", arr)
        if not np.all(np.isfinite(arr)):
            raise ValueError("eta must be finite")
        if np.any(arr < MIN_PROB):
            raise ValueError("eta entries must be strictly positive")
        # the implied last probability 1 - sum(eta) must stay positive
        if 1.0 - arr.sum() < MIN_PROB:
            raise ValueError(f"eta entries must sum to less than 1, got {arr.sum()!r}")

    @property
    def n(self):
        return self.eta.size


@dataclass(frozen=True)
class ThetaCoord:
    """Exponential coordinates: log-odds against the last outcome."""

    theta: np.ndarray

    def __post_init__(self):
        arr = _readonly_vector(self.theta, "theta")
        object.__setattr__(self, "theta", arr)
        if not np.all(np.isfinite(arr)):
            raise ValueError("theta must be finite")

    @property
    def n(self):
        return self.theta.size


# ---------------------------------------------------------------------------
# conversions


def to_eta(p: SimplexPoint) -> EtaCoord:
    """Drop the last probability."""
    return EtaCoord(p.probs[:-1])


def to_theta(p: SimplexPoint) -> ThetaCoord:
    """Log-odds of each outcome against the last one."""
    return ThetaCoord(np.log(p.probs[:-1]) - np.log(p.probs[-1]))


def simplex_from_eta(e: EtaCoord) -> SimplexPoint:
    return SimplexPoint(np.append(e.eta, 1.0 - e.eta.sum()))


def simplex_from_theta(t: ThetaCoord) -> SimplexPoint:
    """Softmax over (theta, 0), shifted so the exponentials cannot overflow."""
    th = t.theta
    m = max(0.0, th.max())
    w = np.exp(np.append(th, 0.0) - m)
    return SimplexPoint(w / w.sum())


def eta_from_theta(t: ThetaCoord) -> EtaCoord:
    return to_eta(simplex_from_theta(t))


def theta_from_eta(e: EtaCoord) -> ThetaCoord:
    return to_theta(simplex_from_eta(e))


# ---------------------------------------------------------------------------
# potentials


def psi(t: ThetaCoord) -> float:
    """Log-partition log(1 + sum exp(theta_i)), overflow-safe.

    Shifting by m = max(0, max theta) keeps every exponential <= 1, so
    psi(1000, 0) evaluates to ~1000 instead of inf.
    """
    th = t.theta
    m = max(0.0, th.max())
    return m + np.log(np.exp(-m) + np.exp(th - m).sum())


def phi(e: EtaCoord) -> float:
    """Negative entropy sum p_i log p_i over all n+1 probabilities."""
    p = simplex_from_eta(e).probs
    return float(np.dot(p, np.log(p)))
