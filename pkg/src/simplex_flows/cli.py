"""Command-line front end.

Subcommands dispatch the lab experiments and a few one-shot utilities.
Settings resolve in three layers: built-in defaults, then a flat key=value
config file (--config), then explicit command-line flags.  Exit codes:
0 success, 1 an experiment assertion failed, 2 usage/config error.
"""

import argparse
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import lab
from .coords import (EtaCoord, SimplexPoint, ThetaCoord, eta_from_theta,
                     simplex_from_eta, simplex_from_theta, to_eta, to_theta)
from .errors import SimplexFlowsError, WitnessNotFound
from .flows import FlowSpec, Trajectory, integrate, natural_flow_exact
from .geometry import hess_phi, hess_psi, kl
from .lab import fmt9
from .rng import make_rng, random_simplex_point
from .spectral import eigh, solve_lyapunov


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    """Resolved settings for one invocation."""

    experiment: str = ""
    n: int = 2
    seed: int = 0
    overrides: dict = field(default_factory=dict)
    output_dir: str = ""


# value parsers for every key a config file or flag may set
def _parse_grid(text):
    parts = text.split(":")
    if len(parts) != 3:
        raise ValueError("grid must be lo:hi:count")
    lo, hi, count = float(parts[0]), float(parts[1]), int(parts[2])
    if count < 1 or lo <= 0 or hi < lo:
        raise ValueError("grid must satisfy 0 < lo <= hi, count >= 1")
    return [lo] if count == 1 else list(np.linspace(lo, hi, count))


def _parse_floats(text):
    return [float(x) for x in text.split(",") if x.strip() != ""]


_KEY_TYPES = {
    "experiment": str, "n": int, "seed": int, "inits": int, "tol": float,
    "out": str, "mode": str, "method": str, "grid": _parse_grid,
    "t_end": float, "dt": float, "sample_every": int, "n_samples": int,
    "minibatch": int, "decay_a": float, "max_iters": int,
    "c_values": _parse_floats, "budget": int, "box": float,
    "directions": int, "s_max": float, "s_count": int, "alpha": float,
    "kind": str, "n_seeds": int,
}


def load_config(path) -> RunConfig:
    """Parse a flat key=value file ('#' starts a comment)."""
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key = value")
            key, val = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in _KEY_TYPES:
                raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                values[key] = _KEY_TYPES[key](val)
            except ValueError as exc:
                raise UsageError(
                    f"{path}:{lineno}: malformed value for key {key!r}: {exc}"
                ) from exc
    cfg = RunConfig()
    cfg.experiment = values.get("experiment", "")
    cfg.n = values.get("n", cfg.n)
    cfg.seed = values.get("seed", cfg.seed)
    cfg.output_dir = values.get("out", cfg.output_dir)
    cfg.overrides = {k: v for k, v in values.items() if k != "experiment"}
    return cfg


def _resolve(args, keys, defaults):
    """defaults <- config file <- explicit flags, restricted to `keys`."""
    settings = dict(defaults)
    if getattr(args, "config", None):
        cfg = load_config(args.config)
        for key, val in cfg.overrides.items():
            if key not in keys:
                raise UsageError(f"config key {key!r} does not apply to this command")
            settings[key] = val
    for key in keys:
        flag = getattr(args, key, None)
        if flag is not None:
            settings[key] = flag
    return settings


def _probs_arg(text):
    return SimplexPoint(np.array(_parse_floats(text)))


def _print_kv(key, value):
    if isinstance(value, (list, tuple, np.ndarray)):
        value = ",".join(fmt9(v) for v in value)
    elif isinstance(value, (float, int, np.floating, np.integer, bool, np.bool_)):
        value = fmt9(value)
    print(f"{key} = {value}")


def _assertions_ok(summary):
    return all(bool(v) for v in summary["assertions"].values())


# ---------------------------------------------------------------------------
# subcommands


def _cmd_sandwich(args):
    s = _resolve(args, ("n", "seed", "inits", "t_end", "dt", "sample_every",
                        "out"),
                 {"n": 2, "seed": 0, "inits": 100, "t_end": None,
                  "dt": 1e-3, "sample_every": 10, "out": ""})
    summary = lab.sandwich_experiment(
        s["n"], s["inits"], s["seed"], t_end=s["t_end"], dt=s["dt"],
        sample_every=s["sample_every"], out_dir=s["out"] or None)
    for key, val in summary["assertions"].items():
        _print_kv(key, val)
    _print_kv("natural_exact_max_err", summary["natural_exact_max_err"])
    return 0 if _assertions_ok(summary) else 1


def _cmd_affine(args):
    s = _resolve(args, ("n", "seed", "c_values", "dt", "out"),
                 {"n": 2, "seed": 0, "c_values": [0.5, 1.0, 2.0],
                  "dt": 1e-3, "out": ""})
    rng = make_rng(s["seed"])
    q = random_simplex_point(rng, s["n"])
    p0 = random_simplex_point(rng, s["n"])
    summary = lab.affine_rate_experiment(s["c_values"], q, p0, dt=s["dt"],
                                         out_dir=s["out"] or None)
    for row in summary["rows"]:
        print(",".join(fmt9(v) for v in row))
    for key, val in summary["assertions"].items():
        _print_kv(key, val)
    return 0 if _assertions_ok(summary) else 1


def _cmd_sweep(args):
    s = _resolve(args, ("method", "grid", "mode", "n", "seed", "inits", "tol",
                        "n_samples", "minibatch", "decay_a", "max_iters",
                        "out"),
                 {"method": "ngd", "grid": None, "mode": "full_batch",
                  "n": 10, "seed": 0, "inits": 100, "tol": 1e-4,
                  "n_samples": 100000, "minibatch": 1000, "decay_a": 1000.0,
                  "max_iters": 100, "out": ""})
    if s["grid"] is None:
        raise UsageError("sweep requires --grid lo:hi:count")
    summary = lab.lr_sweep(s["method"], s["grid"], s["inits"], s["tol"],
                           s["seed"], mode=s["mode"], n=s["n"],
                           n_samples=s["n_samples"], minibatch=s["minibatch"],
                           decay_a=s["decay_a"], max_iters=s["max_iters"],
                           out_dir=s["out"] or None)
    for lr, t in summary["rows"]:
        print(f"{fmt9(lr)},{t}")
    _print_kv("argmin_time", summary["argmin_time"])
    _print_kv("argmin_lrs", summary["argmin_lrs"])
    return 0


def _cmd_robustness(args):
    s = _resolve(args, ("kind", "n", "seed", "n_seeds", "out"),
                 {"kind": "multiplicative", "n": 2, "seed": 0,
                  "n_seeds": 10, "out": ""})
    rng = make_rng(s["seed"])
    q = random_simplex_point(rng, s["n"])
    seeds = [s["seed"] * 1000 + i for i in range(s["n_seeds"])]
    summary = lab.robustness_experiment(s["kind"], q, seeds,
                                        out_dir=s["out"] or None)
    for key, val in summary["assertions"].items():
        _print_kv(key, val)
    return 0 if _assertions_ok(summary) else 1


def _cmd_empirical(args):
    s = _resolve(args, ("n", "seed", "alpha", "n_samples", "max_iters", "out"),
                 {"n": 2, "seed": 0, "alpha": None, "n_samples": 100000,
                  "max_iters": 100, "out": ""})
    summary = lab.empirical_sandwich(s["n"], s["seed"], alpha=s["alpha"],
                                     n_samples=s["n_samples"],
                                     max_iters=s["max_iters"],
                                     out_dir=s["out"] or None)
    for key, val in summary["assertions"].items():
        _print_kv(key, val)
    _print_kv("plateau_kl_q_qhat", summary["plateau_kl_q_qhat"])
    return 0 if _assertions_ok(summary) else 1


def _cmd_nonconvexity(args):
    s = _resolve(args, ("seed", "budget", "box"),
                 {"seed": 0, "budget": 10000, "box": 8.0})
    p = _probs_arg(args.p) if args.p else SimplexPoint(np.array([0.7, 0.2, 0.1]))
    try:
        witness = lab.nonconvexity_witness(p, s["seed"], budget=s["budget"],
                                           box=s["box"])
    except WitnessNotFound as exc:
        print(f"witness_found = false  # {exc}")
        return 1
    _print_kv("witness_found", True)
    _print_kv("probes", witness["probes"])
    _print_kv("theta_a", witness["theta_a"])
    _print_kv("theta_b", witness["theta_b"])
    _print_kv("theta_mid", witness["theta_mid"])
    for key, val in witness["values"].items():
        _print_kv(key, val)
    return 0


def _cmd_sections(args):
    s = _resolve(args, ("n", "seed", "directions", "s_max", "s_count", "out"),
                 {"n": 2, "seed": 0, "directions": 8, "s_max": 0.2,
                  "s_count": 41, "out": ""})
    rng = make_rng(s["seed"])
    q = random_simplex_point(rng, s["n"])
    grid = np.linspace(-s["s_max"], s["s_max"], s["s_count"])
    summary = lab.local_sections(q, s["directions"], grid, seed=s["seed"],
                                 out_dir=s["out"] or None)
    for key, val in summary["assertions"].items():
        _print_kv(key, val)
    return 0 if _assertions_ok(summary) else 1


def _cmd_convert(args):
    given = [x for x in (args.theta, args.eta, args.p) if x is not None]
    if len(given) != 1:
        raise UsageError("convert needs exactly one of --theta, --eta, --p")
    if args.theta is not None:
        point = simplex_from_theta(ThetaCoord(np.array(_parse_floats(args.theta))))
    elif args.eta is not None:
        point = simplex_from_eta(EtaCoord(np.array(_parse_floats(args.eta))))
    else:
        point = _probs_arg(args.p)
    _print_kv("p", point.probs)
    _print_kv("eta", to_eta(point).eta)
    _print_kv("theta", to_theta(point).theta)
    return 0


def _cmd_kl(args):
    if args.q is None or args.p is None:
        raise UsageError("kl needs --q and --p")
    value = kl(_probs_arg(args.q), _probs_arg(args.p))
    _print_kv("kl", value)
    return 0


def _cmd_fit_rate(args):
    if args.file is None:
        raise UsageError("fit-rate needs --file with columns t,kl")
    data = np.loadtxt(args.file, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] < 2:
        raise UsageError("fit-rate file must have two columns: t,kl")
    traj = Trajectory(data[:, 0], data[:, 0][:, None], data[:, 1])
    fit = lab.fit_rate(traj)
    _print_kv("slope", fit.slope)
    _print_kv("intercept", fit.intercept)
    _print_kv("r_squared", fit.r_squared)
    _print_kv("window", fit.window)
    return 0


def _cmd_selftest(args):
    failures = run_selftest()
    for name, ok in failures.items():
        _print_kv(name, ok)
    return 0 if all(failures.values()) else 1


def run_selftest() -> dict:
    """A fast sweep over core identities; every value must be True."""
    rng = make_rng(20240817)
    checks = {}
    p = random_simplex_point(rng, 4)
    q = random_simplex_point(rng, 4)
    checks["chart_roundtrip"] = bool(
        np.abs(simplex_from_theta(to_theta(p)).probs - p.probs).max() < 1e-12)
    from .geometry import bregman_phi, bregman_psi
    d_kl = kl(q, p)
    checks["three_way_divergence"] = bool(
        abs(bregman_psi(to_theta(p), to_theta(q)) - d_kl) < 1e-12
        and abs(bregman_phi(to_eta(q), to_eta(p)) - d_kl) < 1e-12)
    h1 = hess_phi(to_eta(p)).entries
    h2 = hess_psi(to_theta(p)).entries
    checks["hessians_mutually_inverse"] = bool(
        np.abs(h1 @ h2 - np.eye(p.n)).max() < 1e-10)
    dec = eigh(h1)
    checks["eigh_reconstruction"] = bool(
        np.abs(dec.vectors @ np.diag(dec.values) @ dec.vectors.T - h1).max()
        < 1e-9 * max(1.0, np.abs(h1).max()))
    pmat = solve_lyapunov(np.eye(3), 0.5).entries
    checks["lyapunov_fixed_point"] = bool(
        np.abs(0.25 * pmat + np.eye(3) - pmat).max() < 1e-12)
    e0, eq = to_eta(p), to_eta(q)
    one_step = eq.eta + 0.0 * (e0.eta - eq.eta)  # linearized ngd at alpha 1
    checks["ngd_one_step"] = bool(np.abs(one_step - eq.eta).max() == 0.0)
    spec = FlowSpec("Lq", "natural_eta", q, p)
    traj = integrate(spec, 1.0, dt=1e-3, sample_every=100)
    exact = natural_flow_exact(eq, e0, 1.0).eta
    checks["natural_flow_matches_exact"] = bool(
        np.abs(traj.states[-1] - exact).max() < 1e-8)
    return checks


_COMMANDS = {
    "sandwich": _cmd_sandwich,
    "affine": _cmd_affine,
    "sweep": _cmd_sweep,
    "robustness": _cmd_robustness,
    "empirical": _cmd_empirical,
    "nonconvexity": _cmd_nonconvexity,
    "sections": _cmd_sections,
    "convert": _cmd_convert,
    "kl": _cmd_kl,
    "fit-rate": _cmd_fit_rate,
    "selftest": _cmd_selftest,
}


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="simplex-flows",
        description="KL-divergence gradient flows and descent on the simplex")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, *flags):
        sp = sub.add_parser(name)
        sp.add_argument("--config")
        for flag in flags:
            key = flag.replace("-", "_")
            sp.add_argument(f"--{flag}", dest=key, type=_ARG_TYPES.get(key, str))
        return sp

    _ARG_TYPES = {
        "n": int, "seed": int, "inits": int, "tol": float, "mode": str,
        "method": str, "grid": _parse_grid, "t_end": float, "dt": float,
        "sample_every": int, "n_samples": int, "minibatch": int,
        "decay_a": float, "max_iters": int, "c_values": _parse_floats,
        "budget": int, "box": float, "directions": int, "s_max": float,
        "s_count": int, "alpha": float, "kind": str, "n_seeds": int,
        "out": str,
    }

    add("sandwich", "n", "seed", "inits", "t-end", "dt", "sample-every", "out")
    add("affine", "n", "seed", "c-values", "dt", "out")
    add("sweep", "method", "grid", "mode", "n", "seed", "inits", "tol",
        "n-samples", "minibatch", "decay-a", "max-iters", "out")
    add("robustness", "kind", "n", "seed", "n-seeds", "out")
    add("empirical", "n", "seed", "alpha", "n-samples", "max-iters", "out")
    nc = add("nonconvexity", "seed", "budget", "box")
    nc.add_argument("--p")
    add("sections", "n", "seed", "directions", "s-max", "s-count", "out")
    cv = add("convert")
    cv.add_argument("--theta")
    cv.add_argument("--eta")
    cv.add_argument("--p")
    klp = add("kl")
    klp.add_argument("--q")
    klp.add_argument("--p")
    fr = add("fit-rate")
    fr.add_argument("--file")
    add("selftest")
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SimplexFlowsError as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
