"""Experiment harness: rate fits, rate bounds, sweeps, robustness, witnesses.

Every experiment takes an explicit seed, runs deterministically (results
are aggregated in a fixed order even when work is farmed out to threads)
and can emit a CSV of per-unit rows plus a JSON summary with the config
echo and pass/fail flags.  All floats are written with 9 significant
digits so reruns with the same seed are byte-identical.
"""

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .coords import EtaCoord, SimplexPoint, ThetaCoord, to_eta, to_theta
from .descent import DescentSpec, destabilizing_delta, optimal_lr
from .empirical import Dataset, empirical_target, run_empirical
from .errors import InsufficientDecay, WitnessNotFound, ZeroCount
from .flows import Trajectory, integrate_batch, natural_flow_exact
from .geometry import (hess_Lq_eta, hess_phi, hess_psi, kl, loss_Lq_theta,
                       loss_Lstar_theta, make_identity_chart)
from .rng import (make_rng, normal_matrix, normal_vector, random_simplex_batch,
                  random_simplex_point)
from .spectral import cond, eigh, eigvalsh_batch, solve_lyapunov

KL_FLOOR = 1e-13
FIT_WINDOW = 0.6
R2_MIN = 0.99
NG_BAND = (1.9, 2.1)
NEAR_OPT_KL = 0.05
DEFAULT_T_END = {2: 1.5}  # every other n defaults to 2.0
DEFAULT_DT = 1e-3
DEFAULT_SAMPLE_EVERY = 10


# ---------------------------------------------------------------------------
# plumbing: formatting, output, parallelism


def fmt9(x) -> str:
    """Canonical 9-significant-digit rendering used in every output file."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.9g}"


def _round9(obj):
    """Round floats to 9 significant digits recursively (stable JSON)."""
    if isinstance(obj, dict):
        return {k: _round9(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round9(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(fmt9(obj))
    if isinstance(obj, np.ndarray):
        return _round9(obj.tolist())
    return obj


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt9(v) for v in row) + "\n")


def write_json(path, summary):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_round9(summary), fh, indent=2, sort_keys=True)
        fh.write("\n")


def worker_count() -> int:
    """Worker cap from SIMPLEX_FLOWS_THREADS (0 or unset = auto)."""
    raw = os.environ.get("SIMPLEX_FLOWS_THREADS", "0")
    try:
        k = int(raw)
    except ValueError as exc:
        raise ValueError(f"SIMPLEX_FLOWS_THREADS must be an integer, got {raw!r}") from exc
    if k < 0:
        raise ValueError("SIMPLEX_FLOWS_THREADS must be nonnegative")
    return k if k > 0 else (os.cpu_count() or 1)


def parallel_map(fn, items):
    """Order-preserving map, threaded when more than one worker is allowed."""
    items = list(items)
    workers = min(worker_count(), max(1, len(items)))
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# rate fitting


@dataclass(frozen=True)
class RateFit:
    """Least-squares slope of log KL vs time over the tail window."""

    slope: float       # positive decay rate
    intercept: float
    r_squared: float
    window: tuple      # (t_lo, t_hi)

    def __post_init__(self):
        if not 0.0 <= self.r_squared <= 1.0 + 1e-12:
            raise ValueError("r_squared must lie in [0, 1]")


@dataclass(frozen=True)
class RateBounds:
    """Twice the extreme Hessian eigenvalues over a sublevel set."""

    m_lo: float
    l_hi: float

    def __post_init__(self):
        if not 0.0 < self.m_lo <= self.l_hi:
            raise ValueError("need 0 < m_lo <= l_hi")


def fit_rate(traj, floor: float = KL_FLOOR,
             window_frac: float = FIT_WINDOW) -> RateFit:
    """Fit log KL vs t on the last window_frac of samples above the floor.

    The decay is exponential only after an uncharacterized burn-in, so the
    fit deliberately ignores the head of the trajectory.
    """
    t, v = _fit_arrays(np.asarray(traj.times), np.asarray(traj.kl_values),
                       floor, window_frac)
    return _fit_from_arrays(t, v)


def _fit_arrays(times, kls, floor, window_frac):
    positive = np.isfinite(kls) & (kls > 0.0)
    if not positive.any():
        raise InsufficientDecay("trajectory KL is identically zero")
    first = kls[positive][0]
    if kls[positive].min() > 0.9 * first:
        raise InsufficientDecay("KL never dropped below 0.9x its initial value")
    mask = positive & (kls > floor)
    tt = times[mask]
    vv = np.log(kls[mask])
    if tt.size < 10:
        raise InsufficientDecay("fewer than 10 samples above the KL floor")
    start = tt.size - int(np.ceil(window_frac * tt.size))
    return tt[start:], vv[start:]


def _fit_from_arrays(tt, vv):
    slope, intercept = np.polyfit(tt, vv, 1)
    resid = vv - (slope * tt + intercept)
    ss_tot = float(((vv - vv.mean()) ** 2).sum())
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - float((resid ** 2).sum()) / ss_tot
    return RateFit(float(-slope), float(intercept), max(0.0, min(1.0, r2)),
                   (float(tt[0]), float(tt[-1])))


# ---------------------------------------------------------------------------
# rate bounds over sublevel sets


@lru_cache(maxsize=32)
def _bounds_pool(loss, q_bytes, n, grid_density, seed):
    """Per-point losses and extreme Hessian eigenvalues on a shared sample.

    The pool depends on (loss, q) only, so bounds for many different p0
    against the same target reuse one batched eigenvalue computation.
    """
    q = np.frombuffer(q_bytes).reshape(n + 1)
    pool = random_simplex_batch(make_rng(seed), n, grid_density)
    pool = np.vstack([q[None, :], pool])  # the optimum always participates
    losses = _kl_rows(q, pool)
    lmin, lmax = _hessian_extremes(loss, q, pool)
    return losses, lmin, lmax


def _kl_rows(q, probs):
    return float((q * np.log(q)).sum()) - np.log(probs) @ q


def _hessian_extremes(loss, q, probs):
    e = probs[:, :-1]
    if loss == "Lq_eta":
        rest = probs[:, -1]
        b, n = e.shape
        h = np.broadcast_to((q[-1] / rest ** 2)[:, None, None], (b, n, n)).copy()
        idx = np.arange(n)
        h[:, idx, idx] += q[:-1] / e ** 2
    elif loss == "Lq_theta":
        h = -np.einsum("bi,bj->bij", e, e)
        idx = np.arange(e.shape[1])
        h[:, idx, idx] += e
    else:
        raise ValueError(f"unknown loss {loss!r}")
    vals = eigvalsh_batch(h)
    return vals[:, 0], vals[:, -1]


def rate_bounds(loss: str, q: SimplexPoint, p0: SimplexPoint,
                grid_density: int = 10000, seed: int = 0,
                extra_probs: Optional[np.ndarray] = None) -> RateBounds:
    """Bracket the asymptotic flow rate: (2m, 2L) with m, L the extreme
    Hessian eigenvalues over a Monte Carlo sample of {x : L(x) <= L(p0)}.

    extra_probs (rows of probability vectors, e.g. a trajectory's own
    states) are always included so the bound covers the path actually
    taken.
    """
    if q.n != p0.n:
        raise ValueError("dimension mismatch")
    losses, lmin, lmax = _bounds_pool(loss, q.probs.tobytes(), q.n,
                                      int(grid_density), int(seed))
    level = kl(q, p0)
    keep = losses <= level + 1e-15
    keep[0] = True  # q itself
    m = float(lmin[keep].min())
    big = float(lmax[keep].max())
    if extra_probs is not None and len(extra_probs):
        xmin, xmax = _hessian_extremes(loss, q.probs,
                                       np.atleast_2d(np.asarray(extra_probs)))
        m = min(m, float(xmin.min()))
        big = max(big, float(xmax.max()))
    return RateBounds(2.0 * m, 2.0 * big)


# ---------------------------------------------------------------------------
# experiments


def draw_near(q: SimplexPoint, p0: SimplexPoint,
              kl_max: float = NEAR_OPT_KL) -> SimplexPoint:
    """Shrink p0 toward q along the mixture line until kl(q||p0) <= kl_max."""
    d = p0.probs - q.probs
    s = 1.0
    for _ in range(200):
        cand = SimplexPoint(q.probs + s * d)
        if kl(q, cand) <= kl_max:
            return cand
        s *= 0.7
    raise ValueError("could not shrink p0 into the near-optimum regime")


def draw_instance(rng, n: int, balance: float = 0.3) -> SimplexPoint:
    """A random target whose smallest probability is not degenerate.

    Flat-Dirichlet draws are rejected until min_i q_i >= balance/(n+1).
    Very lopsided targets make every flow's transient so long and violent
    that no finite window of the KL curve is a clean exponential.
    """
    for _ in range(100000):
        q = random_simplex_point(rng, n)
        if q.probs.min() >= balance / (n + 1):
            return q
    raise ValueError("could not draw a balanced target; lower balance")


def sandwich_experiment(n: int, n_inits: int, seed: int,
                        t_end: Optional[float] = None, dt: float = DEFAULT_DT,
                        sample_every: int = DEFAULT_SAMPLE_EVERY,
                        r2_min: float = R2_MIN, ng_band=NG_BAND,
                        kl_cap: float = 0.1,
                        out_dir: Optional[str] = None) -> dict:
    """Fit decay rates of the three flows of L_q from many random inits.

    Checks, per init: theta-rate < 2 < eta-rate, natural rate inside
    ng_band, every fit R^2 >= r2_min; also that the integrated natural flow
    matches its closed-form solution to 1e-8.

    The rate claims are asymptotic, so random inits are pulled along the
    mixture line toward the optimum until kl(q||p0) <= kl_cap, and each
    chart gets its own horizon, long enough that the tail fit window sits
    in the regime where the slowest curvature mode at the optimum
    dominates.  (With a single shared horizon the slow theta flow is still
    mid-transient when the fast eta flow is already at the KL floor, and
    the fits pick up the drifting transient slope.)
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    rng = make_rng(seed)
    q = draw_instance(rng, n)
    inits = random_simplex_batch(rng, n, n_inits)
    if kl_cap is not None:
        inits = np.array([draw_near(q, SimplexPoint(row), kl_cap).probs
                          for row in inits])

    vals = eigh(hess_phi(to_eta(q))).values
    kl0_max = max(kl(q, SimplexPoint(row)) for row in inits)
    # asymptotic decay rates: 2 lambda_min of the curvature in each chart
    rate_est = {"eta": 2.0 * vals[0], "natural_eta": 2.0, "theta": 2.0 / vals[-1]}
    results, horizons = {}, {}
    for chart in ("eta", "natural_eta", "theta"):
        if t_end is not None:
            t_chart, dt_chart = t_end, dt
        else:
            # run the max-KL init down to ~20x the fit floor
            t_chart = np.log(kl0_max / (20.0 * KL_FLOOR)) / rate_est[chart]
            dt_chart = max(dt, t_chart / 20000.0)
        times, states, kls = integrate_batch("Lq", chart, q, inits, t_chart,
                                             dt=dt_chart,
                                             sample_every=sample_every)
        results[chart] = (times, states, kls)
        horizons[chart] = float(t_chart)

    nat_times = results["natural_eta"][0]
    nat_states = results["natural_eta"][1]
    eta_q = q.probs[:-1]
    exact = eta_q + np.exp(-nat_times)[:, None, None] * (inits[None, :, :-1] - eta_q)
    natural_exact_err = float(np.abs(nat_states - exact).max())

    rows, excluded = [], []
    ok_order = ok_band = ok_r2 = True
    for b in range(n_inits):
        try:
            fits = {c: _fit_from_arrays(*_fit_arrays(results[c][0],
                                                     results[c][2][:, b],
                                                     KL_FLOOR, FIT_WINDOW))
                    for c in ("eta", "natural_eta", "theta")}
        except InsufficientDecay:
            excluded.append(b)
            continue
        r_eta = fits["eta"].slope
        r_ng = fits["natural_eta"].slope
        r_theta = fits["theta"].slope
        ok_order &= r_theta < 2.0 < r_eta
        ok_band &= ng_band[0] <= r_ng <= ng_band[1]
        ok_r2 &= min(f.r_squared for f in fits.values()) >= r2_min
        rows.append((b, r_eta, r_ng, r_theta, fits["eta"].r_squared,
                     fits["natural_eta"].r_squared, fits["theta"].r_squared))

    summary = {
        "experiment": "sandwich",
        "config": {"n": n, "n_inits": n_inits, "seed": seed, "t_end": t_end,
                   "dt": dt, "sample_every": sample_every, "r2_min": r2_min,
                   "ng_band": list(ng_band), "kl_cap": kl_cap},
        "horizons": horizons,
        "excluded_inits": excluded,
        "seed": seed,
        "target": q.probs.tolist(),
        "assertions": {
            "ordering_theta_lt_2_lt_eta": bool(ok_order),
            "natural_rate_in_band": bool(ok_band),
            "r_squared_min": bool(ok_r2),
            "natural_matches_exact_1e-8": bool(natural_exact_err < 1e-8),
        },
        "natural_exact_max_err": natural_exact_err,
        "rows": [list(r) for r in rows],
    }
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        write_csv(os.path.join(out_dir, f"sandwich_n{n}.csv"),
                  ["init_id", "rate_eta", "rate_ng", "rate_theta",
                   "r2_eta", "r2_ng", "r2_theta"], rows)
        write_json(os.path.join(out_dir, f"sandwich_n{n}.json"),
                   {k: v for k, v in summary.items() if k != "rows"})
    summary["_target"] = q
    summary["_inits"] = inits
    summary["_trajectories"] = results
    return summary


def affine_rate_experiment(c_values: Sequence[float], q: SimplexPoint,
                           p0: SimplexPoint, dt: float = DEFAULT_DT,
                           sample_every: int = DEFAULT_SAMPLE_EVERY,
                           rtol: float = 0.10,
                           out_dir: Optional[str] = None) -> dict:
    """Fitted rates in conditioning-equalized affine charts vs 2c and 2/c.

    The claim is local, so p0 is pulled toward q until kl(q||p0) <= 0.05
    before integrating.
    """
    if any(c <= 0 for c in c_values):
        raise ValueError("every c must be positive")
    p_near = draw_near(q, p0)
    tq = to_theta(q)
    hq_eta = hess_phi(to_eta(q)).entries
    hq_theta = hess_psi(tq).entries

    rows, ok_rates, hess_dev = [], True, 0.0
    for c in c_values:
        chart = make_identity_chart(tq, c)
        a = chart.a_matrix
        dev_eta = np.abs(chart.a_inv @ hq_eta @ chart.a_inv.T
                         - c * np.eye(q.n)).max()
        dev_theta = np.abs(a.T @ hq_theta @ a - np.eye(q.n) / c).max()
        hess_dev = max(hess_dev, float(dev_eta), float(dev_theta))
        kl0 = kl(q, p_near)
        fits = {}
        for chart_kind, expected in (("affine_eta", 2.0 * c),
                                     ("affine_theta", 2.0 / c)):
            # run down to ~20x the fit floor so the tail window is asymptotic
            t_end = np.log(kl0 / (20.0 * KL_FLOOR)) / expected
            dt_chart = max(dt, t_end / 20000.0)
            times, _states, kls = integrate_batch(
                "Lq", chart_kind, q, p_near.probs[None, :], t_end,
                dt=dt_chart, sample_every=sample_every, affine=chart)
            fit = _fit_from_arrays(*_fit_arrays(times, kls[:, 0],
                                                KL_FLOOR, FIT_WINDOW))
            fits[chart_kind] = fit
            ok_rates &= abs(fit.slope - expected) <= rtol * expected
        rows.append((c, fits["affine_eta"].slope, 2.0 * c,
                     fits["affine_theta"].slope, 2.0 / c,
                     fits["affine_eta"].r_squared,
                     fits["affine_theta"].r_squared))

    summary = {
        "experiment": "affine",
        "config": {"c_values": list(map(float, c_values)), "dt": dt,
                   "sample_every": sample_every, "rtol": rtol},
        "target": q.probs.tolist(),
        "init": p_near.probs.tolist(),
        "assertions": {
            "rates_within_rtol": bool(ok_rates),
            "hessians_identity_1e-10": bool(hess_dev < 1e-10),
        },
        "hessian_identity_max_dev": hess_dev,
        "rows": [list(r) for r in rows],
    }
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        write_csv(os.path.join(out_dir, "affine.csv"),
                  ["c", "rate_eta_bar", "expected_eta_bar", "rate_theta_bar",
                   "expected_theta_bar", "r2_eta_bar", "r2_theta_bar"], rows)
        write_json(os.path.join(out_dir, "affine.json"),
                   {k: v for k, v in summary.items() if k != "rows"})
    return summary


# --- learning-rate sweeps ---------------------------------------------------


def _softmax_eta_rows(theta_rows):
    m = np.maximum(0.0, theta_rows.max(axis=1))
    w = np.exp(theta_rows - m[:, None])
    denom = w.sum(axis=1) + np.exp(-m)
    return w / denom[:, None]


def _gap_rows(q_hat, probs_rows):
    with np.errstate(divide="ignore", invalid="ignore"):
        logs = np.log(probs_rows)
    return float((q_hat * np.log(q_hat)).sum()) - logs @ q_hat


def _batch_convergence_times(method, mode, counts, init_probs, lr, tolerance,
                             max_iters, minibatch, decay_a, sgd_seed):
    """Convergence iteration (to the empirical target) per initialization."""
    q_hat = counts / counts.sum()
    eta_hat = q_hat[:-1]
    b = init_probs.shape[0]
    theta_state = method == "gd_theta"
    if theta_state:
        y = np.log(init_probs[:, :-1]) - np.log(init_probs[:, -1:])
    else:
        y = init_probs[:, :-1].copy()
    rng = make_rng(sgd_seed)
    times = np.full(b, max_iters, dtype=np.int64)
    alive = np.ones(b, dtype=bool)

    def probs_of(yv):
        if theta_state:
            e = _softmax_eta_rows(yv)
        else:
            e = yv
        return np.hstack([e, 1.0 - e.sum(axis=1, keepdims=True)])

    gaps = _gap_rows(q_hat, probs_of(y))
    hit = alive & (gaps <= tolerance)
    times[hit] = 0
    alive &= ~hit
    for k in range(max_iters):
        if not alive.any():
            break
        if mode == "sgd":
            draw = rng.multivariate_hypergeometric(counts, minibatch, size=b)
            target_eta = draw[:, :-1] / minibatch
            a = lr * decay_a / (k + decay_a)
        else:
            target_eta = eta_hat
            a = lr
        if method == "gd_eta":
            v = target_eta - y
            rest = 1.0 - y.sum(axis=1, keepdims=True)
            y = y + a * (v / y + v.sum(axis=1, keepdims=True) / rest)
        elif method == "gd_theta":
            y = y - a * (_softmax_eta_rows(y) - target_eta)
        else:  # ngd, mixture coordinates
            y = y - a * (y - target_eta)
        finite = np.all(np.isfinite(y), axis=1)
        if theta_state:
            dead = alive & ~finite
        else:
            interior = finite & np.all(y > 0.0, axis=1) & (y.sum(axis=1) < 1.0)
            dead = alive & ~interior
        if dead.any():
            alive &= ~dead
            y[dead] = (np.log(init_probs[dead, :-1]) - np.log(init_probs[dead, -1:])
                       if theta_state else init_probs[dead, :-1])
        if not alive.any():
            break
        gaps = _gap_rows(q_hat, probs_of(y))
        hit = alive & (gaps <= tolerance)
        times[hit] = k + 1
        alive &= ~hit
    return times


def lr_sweep(method: str, lr_grid: Sequence[float], n_inits: int,
             tolerance: float, seed: int, mode: str = "full_batch",
             n: int = 10, n_samples: int = 100000, minibatch: int = 1000,
             decay_a: float = 1000.0, max_iters: int = 100,
             out_dir: Optional[str] = None) -> dict:
    """Worst-case convergence time to the empirical target per learning rate.

    One dataset and one pool of initializations are drawn from the seed and
    shared across the whole grid (and across methods given the same seed),
    so times are comparable.  A row saturates at max_iters when any init
    fails to converge.
    """
    if method not in ("gd_eta", "gd_theta", "ngd"):
        raise ValueError(f"unknown method {method!r}")
    if mode not in ("full_batch", "sgd"):
        raise ValueError(f"unknown mode {mode!r}")
    lr_grid = [float(x) for x in lr_grid]
    if not lr_grid or any(x <= 0 for x in lr_grid):
        raise ValueError("lr_grid must be nonempty and positive")
    rng = make_rng(seed)
    q = draw_instance(rng, n)
    counts = rng.multinomial(n_samples, q.probs)
    if np.any(counts == 0):
        raise ZeroCount("dataset missed an outcome; increase n_samples")
    inits = random_simplex_batch(rng, n, n_inits)

    def one(idx_lr):
        idx, lr = idx_lr
        per_init = _batch_convergence_times(
            method, mode, counts, inits, lr, tolerance, max_iters,
            minibatch, decay_a, sgd_seed=[seed, 91, idx])
        return int(per_init.max())

    times = parallel_map(one, list(enumerate(lr_grid)))
    rows = list(zip(lr_grid, times))
    best = min(times)
    argmin_lrs = [lr for lr, t in rows if t == best]
    summary = {
        "experiment": "sweep",
        "config": {"method": method, "mode": mode, "n": n, "seed": seed,
                   "n_inits": n_inits, "tolerance": tolerance,
                   "n_samples": n_samples, "minibatch": minibatch,
                   "decay_a": decay_a, "max_iters": max_iters,
                   "grid_size": len(lr_grid)},
        "target": q.probs.tolist(),
        "argmin_time": int(best),
        "argmin_lrs": argmin_lrs,
        "rows": [[lr, t] for lr, t in rows],
    }
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        write_csv(os.path.join(out_dir, f"sweep_{method}_{mode}.csv"),
                  ["learning_rate", "convergence_time"], rows)
        write_json(os.path.join(out_dir, f"sweep_{method}_{mode}.json"),
                   {k: v for k, v in summary.items() if k != "rows"})
    return summary


def empirical_sandwich(n: int, seed: int, alpha: Optional[float] = None,
                       n_samples: int = 100000, max_iters: int = 100,
                       ordering_from: int = 5,
                       out_dir: Optional[str] = None) -> dict:
    """Full-batch descent at one small shared step size, all three methods.

    With a tiny common alpha the discrete iterates track the continuous
    flows, so the per-iteration KL to the true q must interleave as
    eta <= natural <= theta from early on; the curves plateau at
    D(q || q_hat), not at zero.
    """
    if alpha is None:
        alpha = 0.01 if n == 2 else 0.001
    rng = make_rng(seed)
    q = random_simplex_point(rng, n)
    d = Dataset(rng.multinomial(n_samples, q.probs))
    q_hat = empirical_target(d)
    p0 = random_simplex_point(rng, n)
    curves = {}
    for method in ("gd_eta", "ngd", "gd_theta"):
        spec = DescentSpec(method, "nonlinear", q_hat, p0, alpha,
                           max_iters=max_iters)
        traj = run_empirical(spec, d, true_target=q)
        curves[method] = traj.kl_values
    ks = np.arange(max_iters + 1)
    slack = 1e-12
    tail = slice(ordering_from, None)
    ordered = bool(
        np.all(curves["gd_eta"][tail] <= curves["ngd"][tail] + slack)
        and np.all(curves["ngd"][tail] <= curves["gd_theta"][tail] + slack))
    plateau = kl(q, q_hat)
    rows = list(zip(ks, curves["gd_eta"], curves["ngd"], curves["gd_theta"]))
    summary = {
        "experiment": "empirical_sandwich",
        "config": {"n": n, "seed": seed, "alpha": alpha,
                   "n_samples": n_samples, "max_iters": max_iters,
                   "ordering_from": ordering_from},
        "target": q.probs.tolist(),
        "plateau_kl_q_qhat": plateau,
        "assertions": {
            f"ordering_eta_le_ng_le_theta_from_k{ordering_from}": ordered,
        },
        "rows": [list(map(float, r)) for r in rows],
    }
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        write_csv(os.path.join(out_dir, f"empirical_sandwich_n{n}.csv"),
                  ["k", "kl_eta", "kl_ng", "kl_theta"], rows)
        write_json(os.path.join(out_dir, f"empirical_sandwich_n{n}.json"),
                   {k: v for k, v in summary.items() if k != "rows"})
    return summary


# --- noise robustness -------------------------------------------------------


def _spectral_norm(mat):
    return float(np.linalg.norm(mat, 2))


def robustness_experiment(kind: str, q: SimplexPoint, seeds: Sequence[int],
                          out_dir: Optional[str] = None) -> dict:
    """Noise studies around the optimum of L_q at q, on the linearized
    error dynamics.

    multiplicative: natural-gradient descent at step 1 contracts under any
    per-step perturbation of spectral norm 0.9, while a rank-one
    perturbation of norm only 1/kappa makes optimally tuned plain gradient
    descent oscillate forever (closed-loop eigenvalue at -1).

    additive: the stationary covariance of the error matches the discrete
    Lyapunov solution (and its top eigenvalue the closed form
    (kappa+1)^2 / (4 kappa)); for natural-gradient descent it is exactly
    the identity.
    """
    if kind not in ("multiplicative", "additive"):
        raise ValueError(f"unknown kind {kind!r}")
    n = q.n
    q_eta = hess_phi(to_eta(q)).entries
    q_theta = hess_psi(to_theta(q)).entries
    if kind == "multiplicative":
        summary = _robustness_multiplicative(q, q_eta, q_theta, seeds)
    else:
        summary = _robustness_additive(q, q_eta, q_theta, seeds)
    summary["target"] = q.probs.tolist()
    summary["config"] = {"kind": kind, "n": n, "seeds": list(map(int, seeds))}
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        write_json(os.path.join(out_dir, f"robustness_{kind}.json"),
                   {k: v for k, v in summary.items() if not k.startswith("_")})
    return summary


def _robustness_multiplicative(q, q_eta, q_theta, seeds, norm=0.9, steps=400):
    n = q.n
    final_norms, envelope_ok = [], True
    for seed in seeds:
        rng = make_rng(seed)
        e = normal_vector(rng, n)
        e = e / np.linalg.norm(e)
        e0_norm = 1.0
        for k in range(steps):
            m = normal_matrix(rng, n, n)
            delta = norm * m / _spectral_norm(m)
            # ngd, alpha = 1: e(k+1) = e - (I + Delta) e = -Delta e
            e = -(delta @ e)
            envelope_ok &= np.linalg.norm(e) <= norm ** (k + 1) * e0_norm + 1e-12
        final_norms.append(float(np.linalg.norm(e)))
    ngd_ok = all(fn < 1e-8 for fn in final_norms)

    gd_results = {}
    for name, mat in (("gd_eta", q_eta), ("gd_theta", q_theta)):
        delta = destabilizing_delta(mat).entries
        alpha = optimal_lr(mat, "optimal")
        closed_loop = np.eye(n) - alpha * (np.eye(n) + delta) @ mat
        eigvals = np.linalg.eigvals(closed_loop)
        dist = float(np.abs(eigvals + 1.0).min())
        # error direction of the -1 eigenvalue = null vector of M + I
        _u, _s, vt = np.linalg.svd(closed_loop + np.eye(n))
        e = vt[-1]
        min_norm = 1.0
        for _ in range(1000):
            e = closed_loop @ e
            min_norm = min(min_norm, float(np.linalg.norm(e)))
        gd_results[name] = {
            "delta_norm": _spectral_norm(delta),
            "eig_dist_to_minus_1": dist,
            "min_error_norm_1e3_steps": min_norm,
            "non_convergent": bool(min_norm >= 0.5),
        }
    return {
        "experiment": "robustness_multiplicative",
        "assertions": {
            "ngd_converges_all_seeds": bool(ngd_ok),
            "ngd_envelope_0.9^k": bool(envelope_ok),
            "gd_eta_destabilized": gd_results["gd_eta"]["non_convergent"],
            "gd_theta_destabilized": gd_results["gd_theta"]["non_convergent"],
            "closed_loop_eig_at_minus_1":
                bool(max(r["eig_dist_to_minus_1"]
                         for r in gd_results.values()) < 1e-10),
        },
        "ngd_final_norms": final_norms,
        "gd": gd_results,
    }


def _mc_covariance(m_mat, n, seed, burn_in=1000, steps=100000):
    """Sample covariance of e(k+1) = M e(k) + delta(k), after burn-in."""
    rng = make_rng(seed)
    e = np.zeros(n)
    for _ in range(burn_in):
        e = m_mat @ e + normal_vector(rng, n)
    rows = np.empty((steps, n))
    for k in range(steps):
        e = m_mat @ e + normal_vector(rng, n)
        rows[k] = e
    return rows.T @ rows / steps


def _robustness_additive(q, q_eta, q_theta, seeds):
    n = q.n
    seed0 = int(seeds[0]) if len(seeds) else 0
    report = {}
    ok_resid = ok_analytic = ok_mc = True
    for sub, (name, mat) in enumerate((("gd_eta", q_eta), ("gd_theta", q_theta))):
        alpha = optimal_lr(mat, "optimal")
        kappa = cond(mat)
        p_stat = solve_lyapunov(mat, alpha).entries
        m_mat = np.eye(n) - alpha * mat
        resid = float(np.abs(m_mat @ p_stat @ m_mat + np.eye(n) - p_stat).max())
        lam_max = float(eigh(p_stat).values[-1])
        closed_form = (kappa + 1.0) ** 2 / (4.0 * kappa)
        mc = _mc_covariance(m_mat, n, seed=[seed0, 17, sub])
        entry_dev = float(np.abs(mc - p_stat).max())
        mc_lam = float(np.linalg.eigvalsh(mc).max())
        ok_resid &= resid < 1e-10
        ok_analytic &= abs(lam_max - closed_form) < 1e-8
        ok_mc &= entry_dev <= 0.05 * lam_max and abs(mc_lam - lam_max) <= 0.05 * lam_max
        report[name] = {
            "alpha": alpha, "kappa": kappa,
            "lyapunov_residual": resid,
            "lambda_max": lam_max, "closed_form": closed_form,
            "mc_entry_dev": entry_dev, "mc_lambda_max": mc_lam,
        }
    # ngd at alpha = 1: errors are exactly the i.i.d. noise, covariance I
    mc_ngd = _mc_covariance(np.zeros((n, n)), n, seed=[seed0, 17, 999])
    ngd_dev = float(np.abs(mc_ngd - np.eye(n)).max())
    report["ngd"] = {"mc_entry_dev": ngd_dev}
    return {
        "experiment": "robustness_additive",
        "assertions": {
            "lyapunov_residual_1e-10": bool(ok_resid),
            "lambda_max_closed_form_1e-8": bool(ok_analytic),
            "mc_matches_lyapunov_5pct": bool(ok_mc),
            "ngd_covariance_identity_3pct": bool(ngd_dev < 0.03),
        },
        "per_method": report,
    }


# --- nonconvexity witness ---------------------------------------------------


def nonconvexity_witness(p: SimplexPoint, search_seed: int,
                         budget: int = 10000, box: float = 8.0,
                         loss: str = "Lstar") -> dict:
    """Random search for a midpoint-convexity violation in theta.

    Draws pairs theta_a, theta_b uniformly from [-box, box]^n and accepts
    when the loss at the midpoint exceeds the max of the endpoint losses
    (so both endpoints sit in a sublevel set the midpoint leaves).  For
    loss="Lstar" (KL with the moving point as first argument) a witness
    exists for asymmetric p; for loss="Lq" convexity guarantees none.
    """
    if loss not in ("Lstar", "Lq"):
        raise ValueError(f"unknown loss {loss!r}")
    f = ((lambda th: loss_Lstar_theta(ThetaCoord(th), p)) if loss == "Lstar"
         else (lambda th: loss_Lq_theta(ThetaCoord(th), p)))
    rng = make_rng(search_seed)
    n = p.n
    for probe in range(1, budget + 1):
        pair = (2.0 * rng.random((2, n)) - 1.0) * box
        th_a, th_b = pair[0], pair[1]
        if np.linalg.norm(th_a - th_b) < 1e-6:
            continue  # degenerate pair carries no information
        level = max(f(th_a), f(th_b))
        th_mid = 0.5 * (th_a + th_b)
        f_mid = f(th_mid)
        if f_mid > level + 1e-9 * max(1.0, abs(level)):
            return {
                "theta_a": th_a, "theta_b": th_b, "theta_mid": th_mid,
                "values": {"f_a": f(th_a), "f_b": f(th_b), "f_mid": f_mid,
                           "level": level},
                "probes": probe,
            }
    raise WitnessNotFound(f"no midpoint violation in {budget} probes")


# --- local sections ---------------------------------------------------------


def local_sections(q: SimplexPoint, n_directions: int, s_grid: Sequence[float],
                   seed: int = 0, small_s: float = 0.05,
                   tol: float = 0.05, out_dir: Optional[str] = None) -> dict:
    """One-dimensional slices of L_q through the optimum in both charts.

    For each unit direction v the table holds L_q(eta_q + s v),
    L_q(theta_q + s v) and the reference s^2/2.  Because the curvature is
    above identity in the mixture chart and below identity in the
    exponential chart, for small |s| the eta-sections dominate the
    reference and the theta-sections stay below it.  Grid points that push
    eta out of the simplex are truncated (reported as NaN).
    """
    s_grid = np.asarray(sorted(float(s) for s in s_grid))
    n = q.n
    if n == 2:
        ang = 2.0 * np.pi * np.arange(n_directions) / n_directions
        dirs = np.column_stack([np.cos(ang), np.sin(ang)])
    else:
        rng = make_rng(seed)
        dirs = normal_matrix(rng, n_directions, n)
        dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    eta_q = q.probs[:-1]
    theta_q = to_theta(q).theta
    rows = []
    ok_eta = ok_theta = True
    for i, v in enumerate(dirs):
        for s in s_grid:
            ref = 0.5 * s * s
            eta = eta_q + s * v
            if np.all(eta > 0) and eta.sum() < 1.0:
                sec_eta = kl(q, SimplexPoint(np.append(eta, 1.0 - eta.sum())))
            else:
                sec_eta = float("nan")
            sec_theta = loss_Lq_theta(ThetaCoord(theta_q + s * v), q)
            if 0 < abs(s) <= small_s:
                if np.isfinite(sec_eta):
                    ok_eta &= sec_eta >= ref * (1.0 - tol)
                ok_theta &= sec_theta <= ref * (1.0 + tol)
            rows.append((i, float(s), sec_eta, sec_theta, ref))
    summary = {
        "experiment": "sections",
        "config": {"n": n, "n_directions": n_directions,
                   "s_grid": s_grid.tolist(), "seed": seed,
                   "small_s": small_s, "tol": tol},
        "target": q.probs.tolist(),
        "assertions": {
            "eta_sections_above_reference": bool(ok_eta),
            "theta_sections_below_reference": bool(ok_theta),
        },
        "rows": [list(r) for r in rows],
    }
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        write_csv(os.path.join(out_dir, "sections.csv"),
                  ["direction_id", "s", "eta_section", "theta_section",
                   "reference"], rows)
        write_json(os.path.join(out_dir, "sections.json"),
                   {k: v for k, v in summary.items() if k != "rows"})
    return summary
