"""Discrete-time gradient and natural-gradient descent on the KL loss L_q.

Three methods:

    gd_eta   plain gradient descent in mixture coordinates (iterates eta)
    gd_theta plain gradient descent in exponential coordinates (iterates theta)
    ngd      natural gradient descent: the gradient is preconditioned by the
             inverse Fisher matrix.  The nonlinear variant iterates theta (a
             Newton-like update that does not land on the optimum in one
             step); the linearized variant reduces to the scalar recursion
             e(k+1) = (1 - alpha) e(k), which is affine invariant and
             converges in exactly one step at alpha = 1.

The linearized variant freezes the curvature at the optimum, so the error
e = x - x* follows e(k+1) = (I - alpha Q) e(k) with Q the Hessian there.
Noise enters only the linearized dynamics: multiplicative noise replaces
the (preconditioned) gradient v by (I + Delta(k)) v; additive noise adds a
unit-covariance Gaussian vector to the state after the update.
"""

from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .coords import (EtaCoord, SimplexPoint, ThetaCoord, eta_from_theta,
                     simplex_from_eta, simplex_from_theta, to_eta, to_theta)
from .errors import BoundaryEscape, NonFinite
from .flows import Trajectory
from .geometry import SymMatrix, hess_phi, hess_phi_matvec, hess_psi, kl
from .rng import make_rng, normal_vector
from .spectral import eigh

METHODS = ("gd_eta", "gd_theta", "ngd")
VARIANTS = ("nonlinear", "linearized")


@dataclass(frozen=True)
class NoiseModel:
    """Gradient noise for the linearized dynamics.

    kind "multiplicative": delta is an (n, n) matrix or a callable k -> matrix;
    the update uses (I + delta(k)) times the gradient.
    kind "additive": i.i.d. N(0, I) vectors drawn from a counter-based
    generator seeded with `seed` are added to the state each step.
    """

    kind: str = "none"
    delta: Union[np.ndarray, Callable, None] = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("none", "multiplicative", "additive"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.kind == "multiplicative" and self.delta is None:
            raise ValueError("multiplicative noise needs a delta")

    def delta_at(self, k: int) -> np.ndarray:
        if callable(self.delta):
            return np.asarray(self.delta(k), dtype=float)
        return np.asarray(self.delta, dtype=float)


@dataclass(frozen=True)
class DescentSpec:
    method: str
    variant: str
    target: SimplexPoint
    init: SimplexPoint
    learning_rate: float
    noise: NoiseModel = NoiseModel()
    max_iters: int = 100

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.target.n != self.init.n:
            raise ValueError("target and init dimension mismatch")
        if not (np.isfinite(self.learning_rate) and self.learning_rate > 0):
            raise ValueError("learning_rate must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.noise.kind != "none" and self.variant != "linearized":
            raise ValueError("noise models apply to the linearized variant only")


def state_coord(spec: DescentSpec, p: SimplexPoint):
    """The coordinate object a given method iterates on."""
    if spec.method == "gd_eta" or (spec.method == "ngd"
                                   and spec.variant == "linearized"):
        return to_eta(p)
    return to_theta(p)


def _curvature_at_optimum(spec: DescentSpec) -> np.ndarray:
    if spec.method == "gd_eta":
        return hess_phi(to_eta(spec.target)).entries
    if spec.method == "gd_theta":
        return hess_psi(to_theta(spec.target)).entries
    return np.eye(spec.target.n)


def _error_update(spec: DescentSpec, e: np.ndarray, k: int, q_mat: np.ndarray,
                  rng) -> np.ndarray:
    """One linearized step in error coordinates e = x - x*."""
    a = spec.learning_rate
    v = q_mat @ e
    if spec.noise.kind == "multiplicative":
        v = v + spec.noise.delta_at(k) @ v
    e_next = e - a * v
    if spec.noise.kind == "additive":
        if rng is None:
            raise ValueError("additive noise requires an rng")
        e_next = e_next + normal_vector(rng, e.size)
    return e_next


def _nonlinear_update(spec: DescentSpec, x: np.ndarray, eta_q: np.ndarray,
                      ) -> np.ndarray:
    a = spec.learning_rate
    if spec.method == "gd_eta":
        e = EtaCoord(x)
        return x + a * hess_phi_matvec(e, eta_q - x)
    if spec.method == "gd_theta":
        eta = eta_from_theta(ThetaCoord(x)).eta
        return x - a * (eta - eta_q)
    # ngd in exponential coordinates: inverse-Fisher preconditioned gradient
    e = eta_from_theta(ThetaCoord(x))
    return x - a * hess_phi_matvec(e, e.eta - eta_q)


def step(spec: DescentSpec, state, k: int = 0, rng=None):
    """One descent update; state type must match state_coord(spec, ...)."""
    eta_q = spec.target.probs[:-1]
    if spec.variant == "nonlinear":
        if spec.noise.kind != "none":
            raise ValueError("noise models apply to the linearized variant only")
        x = step_array(spec, _coord_array(spec, state), k)
        return _coord_from_array(spec, x)
    q_mat = _curvature_at_optimum(spec)
    x_star = (eta_q if isinstance(state, EtaCoord)
              else to_theta(spec.target).theta)
    x = _coord_array(spec, state)
    e = _error_update(spec, x - x_star, k, q_mat, rng)
    return _coord_from_array(spec, x_star + e)


def step_array(spec: DescentSpec, x: np.ndarray, k: int = 0) -> np.ndarray:
    """Nonlinear update on the raw coordinate array (no validation)."""
    return _nonlinear_update(spec, x, spec.target.probs[:-1])


def _coord_array(spec, state):
    if isinstance(state, EtaCoord):
        return state.eta.copy()
    if isinstance(state, ThetaCoord):
        return state.theta.copy()
    return np.asarray(state, dtype=float)


def _coord_from_array(spec, x):
    if spec.method == "gd_eta" or (spec.method == "ngd"
                                   and spec.variant == "linearized"):
        return EtaCoord(x)
    return ThetaCoord(x)


def _state_probs(spec, x):
    if spec.method == "gd_eta" or (spec.method == "ngd"
                                   and spec.variant == "linearized"):
        return np.append(x, 1.0 - x.sum())
    m = max(0.0, x.max())
    w = np.exp(np.append(x, 0.0) - m)
    return w / w.sum()


def _eta_state_valid(x):
    return np.all(np.isfinite(x)) and np.all(x > 0) and x.sum() < 1.0


def run(spec: DescentSpec, tol: Optional[float] = None,
        record_kl: bool = True) -> Trajectory:
    """Iterate the update, recording the state and KL to the target.

    Stops early once KL drops to tol (if given).  Noise-free runs whose
    mixture state leaves the simplex raise BoundaryEscape; overflowing
    exponential states raise NonFinite.  Noisy runs record NaN for the KL
    whenever the state has no interior representation.
    """
    eta_q = spec.target.probs[:-1]
    theta_q = to_theta(spec.target).theta
    noisy = spec.noise.kind != "none"
    rng = make_rng(spec.noise.seed) if spec.noise.kind == "additive" else None
    eta_like = spec.method == "gd_eta" or (spec.method == "ngd"
                                           and spec.variant == "linearized")
    x = _coord_array(spec, state_coord(spec, spec.init))
    if spec.variant == "linearized":
        x_star = eta_q if eta_like else theta_q
        q_mat = _curvature_at_optimum(spec)
        e = x - x_star
    q_log_q = float(np.dot(spec.target.probs, np.log(spec.target.probs)))

    def kl_of(xv):
        if eta_like and not _eta_state_valid(xv):
            if noisy:
                return np.nan
            raise BoundaryEscape("iterate left the simplex; reduce the step size")
        if not np.all(np.isfinite(xv)):
            if noisy:
                return np.nan
            raise NonFinite("iterate overflowed; reduce the step size")
        p = _state_probs(spec, xv)
        return q_log_q - float(np.dot(spec.target.probs, np.log(p)))

    states, kls = [x.copy()], [kl_of(x) if record_kl else np.nan]
    for k in range(spec.max_iters):
        if record_kl and tol is not None and kls[-1] <= tol:
            break
        if spec.variant == "linearized":
            e = _error_update(spec, e, k, q_mat, rng)
            x = x_star + e
        else:
            x = _nonlinear_update(spec, x, eta_q)
            if eta_like and not _eta_state_valid(x):
                raise BoundaryEscape("iterate left the simplex; reduce the step size")
            if not np.all(np.isfinite(x)):
                raise NonFinite("iterate overflowed; reduce the step size")
        states.append(x.copy())
        kls.append(kl_of(x) if record_kl else np.nan)
    return Trajectory(np.arange(len(states), dtype=float),
                      np.array(states), np.array(kls))


# ---------------------------------------------------------------------------
# step sizes and adversarial noise


def optimal_lr(q_matrix, rule: str = "optimal") -> float:
    """Step size from the extreme eigenvalues of the curvature Q.

    "standard": 1/lambda_max, worst-case contraction (1 - 1/kappa)^2 per step.
    "optimal":  2/(lambda_min + lambda_max), contraction (1 - 2/(kappa+1))^2.
    """
    vals = eigh(q_matrix).values
    if vals[0] <= 0:
        raise ValueError("curvature matrix must be positive definite")
    if rule == "standard":
        return float(1.0 / vals[-1])
    if rule == "optimal":
        return float(2.0 / (vals[0] + vals[-1]))
    raise ValueError(f"unknown rule {rule!r}")


def destabilizing_delta(q_matrix) -> SymMatrix:
    """Smallest-norm multiplicative perturbation that breaks the optimally
    tuned iteration.

    Delta = u_max u_max^T / kappa inflates the largest curvature direction
    just enough that I - alpha (I + Delta) Q, alpha = 2/(l_min + l_max),
    has an eigenvalue at exactly -1: the error along u_max flips sign
    forever instead of contracting.  Its norm 1/kappa matches the classical
    stability margin of the optimal step size.
    """
    dec = eigh(q_matrix)
    if dec.values[0] <= 0:
        raise ValueError("curvature matrix must be positive definite")
    kappa = dec.values[-1] / dec.values[0]
    u = dec.vectors[:, -1]
    return SymMatrix(np.outer(u, u) / kappa)


def gaussian_noise(dim: int, rng) -> np.ndarray:
    """A standard normal vector from the shared Box-Muller stream."""
    if dim < 1:
        raise ValueError("dim must be positive")
    return normal_vector(rng, dim)
