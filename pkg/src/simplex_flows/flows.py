"""Gradient and natural-gradient flows of the two KL losses.

Each flow is an ODE x'(t) = -grad L(x) in one of the coordinate charts
(mixture eta, exponential theta, their Fisher-preconditioned "natural"
versions, or an affine rechart).  Integration is classical fixed-step RK4
on an outer time grid; inside each outer step the integrator takes as many
equal substeps as a cheap curvature bound demands, because the mixture
chart's Hessian blows up like 1/eta_min^2 near the boundary and a single
global step size would either be wastefully small or unstable for
initializations drawn near a face.  The outer sampling grid is unchanged
by substepping, so recorded times line up across flows.

The natural flow of L_q has the closed-form solution
eta(t) = eta_q + exp(-t) (eta_0 - eta_q), exposed as natural_flow_exact
and used as an oracle for the integrator.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .coords import EtaCoord, SimplexPoint, ThetaCoord, to_eta, to_theta
from .errors import BoundaryEscape
from .geometry import AffineChart

CHARTS = ("eta", "theta", "natural_eta", "natural_theta",
          "affine_eta", "affine_theta")
LOSSES = ("Lq", "Lstar")

# substep count is ceil(dt * curvature_bound / this); RK4's real-axis
# stability limit is ~2.78, the margin absorbs slack in the bounds
STIFFNESS_MARGIN = 1.5


@dataclass(frozen=True)
class FlowSpec:
    """One flow: which loss, which chart, target and initial distribution."""

    loss: str
    chart: str
    target: SimplexPoint
    init: SimplexPoint
    affine: Optional[AffineChart] = None

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.chart not in CHARTS:
            raise ValueError(f"unknown chart {self.chart!r}")
        if self.target.n != self.init.n:
            raise ValueError("target and init dimension mismatch")
        if self.chart.startswith("affine"):
            if self.affine is None:
                raise ValueError("affine chart requires an AffineChart")
            if self.affine.n != self.target.n:
                raise ValueError("affine chart dimension mismatch")
        elif self.affine is not None:
            raise ValueError("affine chart given but chart is not affine")


@dataclass(frozen=True)
class Trajectory:
    """Sampled states of one run: times, chart states and KL to the target."""

    times: np.ndarray
    states: np.ndarray
    kl_values: np.ndarray
    loss_gaps: Optional[np.ndarray] = None

    def __post_init__(self):
        t = np.array(self.times, dtype=float)
        x = np.array(self.states, dtype=float)
        k = np.array(self.kl_values, dtype=float)
        if not (t.ndim == 1 and x.ndim == 2 and k.ndim == 1
                and t.size == x.shape[0] == k.size):
            raise ValueError("inconsistent trajectory shapes")
        if t.size >= 2 and np.any(np.diff(t) <= 0):
            raise ValueError("times must be strictly increasing")
        for arr in (t, x, k):
            arr.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "states", x)
        object.__setattr__(self, "kl_values", k)
        if self.loss_gaps is not None:
            g = np.array(self.loss_gaps, dtype=float)
            if g.shape != t.shape:
                raise ValueError("loss_gaps length mismatch")
            g.setflags(write=False)
            object.__setattr__(self, "loss_gaps", g)


# ---------------------------------------------------------------------------
# chart engines (batched: states are rows of a (B, n) array)


def _softmax_probs(theta_rows):
    m = np.maximum(0.0, theta_rows.max(axis=1))
    w = np.exp(theta_rows - m[:, None])
    tail = np.exp(-m)
    denom = w.sum(axis=1) + tail
    return np.hstack([w / denom[:, None], (tail / denom)[:, None]])


class _Engine:
    """rhs / curvature bound / conversions for one (loss, chart) pair."""

    def __init__(self, loss, chart, target, affine=None):
        self.loss = loss
        self.chart = chart
        self.affine = affine
        self.q = target.probs
        self.eta_q = target.probs[:-1]
        self.rest_q = target.probs[-1]
        self.theta_q = to_theta(target).theta
        self.n = target.n
        if affine is not None:
            self.a_norm2 = np.linalg.norm(affine.a_matrix, 2) ** 2
            self.a_inv_norm2 = np.linalg.norm(affine.a_inv, 2) ** 2
        self._eta_like = chart in ("eta", "natural_eta", "affine_eta")

    # conversions ----------------------------------------------------------

    def init_state(self, p0: SimplexPoint) -> np.ndarray:
        if self.chart in ("eta", "natural_eta"):
            return p0.probs[:-1].copy()
        if self.chart in ("theta", "natural_theta"):
            return to_theta(p0).theta.copy()
        if self.chart == "affine_eta":
            return self.affine.barred_from_eta(to_eta(p0))
        return self.affine.barred_from_theta(to_theta(p0))

    def _eta_rows(self, y):
        """Mixture coordinates of every row, whatever the chart."""
        if self.chart in ("eta", "natural_eta"):
            return y
        if self.chart in ("theta", "natural_theta"):
            return _softmax_probs(y)[:, :-1]
        if self.chart == "affine_eta":
            return y @ self.affine.a_inv  # rows (A^-T etabar)^T = etabar^T A^-1
        th = y @ self.affine.a_matrix.T + self.affine.b_offset
        return _softmax_probs(th)[:, :-1]

    def probs(self, y):
        e = self._eta_rows(y)
        return np.hstack([e, 1.0 - e.sum(axis=1, keepdims=True)])

    def valid(self, y):
        if not np.all(np.isfinite(y)):
            return False
        if self.chart in ("theta", "natural_theta", "affine_theta"):
            return True
        e = self._eta_rows(y)
        return bool(np.all(e > 0.0) and np.all(e.sum(axis=1) < 1.0))

    def kl_to_target(self, y):
        p = self.probs(y)
        if self.loss == "Lq":
            return (self.q * np.log(self.q)).sum() - np.log(p) @ self.q
        return (p * (np.log(p) - np.log(self.q))).sum(axis=1)

    # dynamics -------------------------------------------------------------

    def rhs(self, y):
        if self.loss == "Lq":
            return self._rhs_lq(y)
        return self._rhs_lstar(y)

    def _mixture_pull(self, e):
        """-grad L_q in mixture coordinates: hess_phi(e) (eta_q - e), rowwise."""
        v = self.eta_q - e
        rest = 1.0 - e.sum(axis=1, keepdims=True)
        return v / e + v.sum(axis=1, keepdims=True) / rest

    def _rhs_lq(self, y):
        if self.chart == "eta":
            return self._mixture_pull(y)
        if self.chart == "theta":
            return self.eta_q - _softmax_probs(y)[:, :-1]
        if self.chart == "natural_eta":
            return self.eta_q - y
        if self.chart == "natural_theta":
            e = _softmax_probs(y)[:, :-1]
            return self._mixture_pull(e)
        if self.chart == "affine_eta":
            e = self._eta_rows(y)
            return self._mixture_pull(e) @ self.affine.a_inv.T
        th = y @ self.affine.a_matrix.T + self.affine.b_offset
        g = _softmax_probs(th)[:, :-1] - self.eta_q
        return -(g @ self.affine.a_matrix)

    def _rhs_lstar(self, y):
        tp = self.theta_q  # for Lstar the fixed target plays the role of p
        if self.chart == "eta":
            rest = 1.0 - y.sum(axis=1, keepdims=True)
            return tp - (np.log(y) - np.log(rest))
        if self.chart == "natural_theta":
            return tp - y
        if self.chart == "theta":
            e = _softmax_probs(y)[:, :-1]
            v = tp - y
            return e * v - e * (e * v).sum(axis=1, keepdims=True)
        if self.chart == "natural_eta":
            rest = 1.0 - y.sum(axis=1, keepdims=True)
            v = tp - (np.log(y) - np.log(rest))
            return y * v - y * (y * v).sum(axis=1, keepdims=True)
        if self.chart == "affine_eta":
            e = self._eta_rows(y)
            rest = 1.0 - e.sum(axis=1, keepdims=True)
            v = tp - (np.log(e) - np.log(rest))
            return v @ self.affine.a_inv.T
        th = y @ self.affine.a_matrix.T + self.affine.b_offset
        e = _softmax_probs(th)[:, :-1]
        v = tp - th
        w = e * v - e * (e * v).sum(axis=1, keepdims=True)
        return w @ self.affine.a_matrix

    def curvature_bound(self, y):
        """Cheap upper bound on the Jacobian norm of the rhs, for substepping."""
        if self.chart == "natural_theta" and self.loss == "Lstar":
            return 1.0
        if self.chart == "natural_eta" and self.loss == "Lq":
            return 1.0
        e = self._eta_rows(y)
        rest = 1.0 - e.sum(axis=1)
        if self.loss == "Lq":
            if self.chart == "theta":
                return 1.0
            if self.chart == "affine_theta":
                return self.a_norm2
            # mixture-side charts share the hess_Lq_eta bound
            base = float((self.eta_q / e ** 2).max()
                         + (self.rest_q * self.n / rest ** 2).max())
            if self.chart == "affine_eta":
                return base * self.a_inv_norm2
            return base
        # Lstar
        if self.chart in ("eta", "affine_eta"):
            base = float((1.0 / e).max() + (self.n / rest).max())
            if self.chart == "affine_eta":
                return base * self.a_inv_norm2
            return base
        # theta-side charts: hess_psi is below identity, third-derivative
        # correction grows with the distance to the target
        rest_col = rest[:, None]
        th = np.log(e) - np.log(rest_col)
        v = np.abs(self.theta_q - th).sum(axis=1)
        base = 1.0 + 2.0 * float(v.max())
        if self.chart == "affine_theta":
            return base * self.a_norm2
        if self.chart == "natural_eta":
            return base * float((1.0 / e).max() + (self.n / rest).max())
        return base


def _rk4_advance(rhs, y, h, substeps):
    for _ in range(substeps):
        k1 = rhs(y)
        k2 = rhs(y + 0.5 * h * k1)
        k3 = rhs(y + 0.5 * h * k2)
        k4 = rhs(y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return y


def integrate_batch(loss, chart, target, init_probs, t_end, dt=1e-3,
                    sample_every=10, affine=None, max_substeps=100000):
    """Integrate one flow from many initializations at once.

    init_probs is a (B, n+1) array of probability rows.  Returns
    (times, states, kls) with shapes (K,), (K, B, n), (K, B).
    """
    eng = _Engine(loss, chart, target, affine)
    init_probs = np.atleast_2d(np.asarray(init_probs, dtype=float))
    y = np.vstack([eng.init_state(SimplexPoint(row)) for row in init_probs])
    if not eng.valid(y):
        raise BoundaryEscape("initial state is not in the chart's valid set")
    n_steps = max(1, int(round(t_end / dt)))
    times, states, kls = [0.0], [y.copy()], [eng.kl_to_target(y)]
    for k in range(1, n_steps + 1):
        bound = eng.curvature_bound(y)
        m = min(max(1, int(np.ceil(dt * bound / STIFFNESS_MARGIN))), max_substeps)
        while True:
            y_next = _rk4_advance(eng.rhs, y, dt / m, m)
            if eng.valid(y_next):
                break
            m *= 10
            if m > max_substeps:
                raise BoundaryEscape(
                    f"state left the valid set at t={k * dt:g} "
                    f"(step size too large)")
        y = y_next
        if k % sample_every == 0 or k == n_steps:
            times.append(k * dt)
            states.append(y.copy())
            kls.append(eng.kl_to_target(y))
    return np.array(times), np.array(states), np.array(kls)


def integrate(spec: FlowSpec, t_end: float, dt: float = 1e-3,
              sample_every: int = 10, max_substeps: int = 100000) -> Trajectory:
    """Integrate a single flow; thin wrapper over the batched integrator."""
    if not (t_end > 0 and dt > 0):
        raise ValueError("t_end and dt must be positive")
    times, states, kls = integrate_batch(
        spec.loss, spec.chart, spec.target, spec.init.probs[None, :],
        t_end, dt=dt, sample_every=sample_every, affine=spec.affine,
        max_substeps=max_substeps)
    return Trajectory(times, states[:, 0, :], kls[:, 0])


def natural_flow_exact(eq: EtaCoord, e0: EtaCoord, t: float) -> EtaCoord:
    """Closed-form natural-gradient flow of L_q:
    eta(t) = eta_q + exp(-t) (eta_0 - eta_q)."""
    if eq.n != e0.n:
        raise ValueError("dimension mismatch")
    if t < 0:
        raise ValueError("t must be nonnegative")
    return EtaCoord(eq.eta + np.exp(-t) * (e0.eta - eq.eta))
