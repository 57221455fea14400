"""
Command-line interface.

    lassoldp [--config FILE] [--seed N] [--out DIR] [--threads N] COMMAND [options]

Parameters are resolved as built-in defaults, then the config file (top-level
keys shared by all commands, then the block named after the command), then
command-line options.  Every output file starts with a header line holding the
resolved configuration and seed, so outputs are a pure function of
(configuration, seed); ``--threads`` and ``--out`` do not enter the header.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical or
convergence failure.
"""
import argparse
import csv
import io
import json
import os
import sys

import numpy as np

from .exceptions import ApproximationError, ConvergenceError, InputError, LassoLDPError, NumericalError
from .inclusion import ForcedModel, exact_piecewise_flow, flow_integrate, forced_flow_integrate
from .invariant import GibbsSpec, TEST_FUNCTIONS, langevin_moments, quadrature_moments_1d, variance_decay_check
from .ldp import CostFunctional, ldp_report
from .paths import ForcingPath, PiecewisePath, Trajectory, fmt
from .problem import Problem, lasso_solve
from .rate import mollify, rate_functional
from .sde import SCHEMES, SdeConfig, SimulationSpec, ensemble, simulate, simulate_forced

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2


def _floats(text):
    """A JSON list or comma-separated numbers."""
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    text = str(text).strip()
    if text.startswith("["):
        return [float(v) for v in json.loads(text)]
    return [float(v) for v in text.split(",") if v.strip()]


def _json(text):
    return json.loads(text) if isinstance(text, str) else text


def _ref(value):
    """A file path or an inline JSON object."""
    return value if isinstance(value, dict) else str(value)


def _bool(text):
    if isinstance(text, bool):
        return text
    if str(text).lower() in ("1", "true", "yes", "on"):
        return True
    if str(text).lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# name -> (parser, default, help); None defaults mean "taken from elsewhere"
PROBLEM = {"problem": (_ref, None, "problem JSON file, or an inline {A, y, mu} object in the config")}
FORCING = {
    "forcing": (_json, None, "piecewise-constant forcing {breakpoints, values} (JSON); replaces the lasso drift"),
    "mu": (float, None, "penalty for the forced system (defaults to the problem's mu)"),
}
SDE = {
    "eps": (float, 0.1, "noise level"),
    "dt": (float, 1e-3, "time step"),
    "horizon": (float, 1.0, "final time"),
    "scheme": (str, "proximal-splitting", f"one of {', '.join(SCHEMES)}"),
}

COMMANDS = {
    "lasso": {
        **PROBLEM,
        "tol": (float, 1e-10, "KKT residual tolerance"),
        "max_iter": (int, 100_000, "iteration cap"),
    },
    "flow": {
        **PROBLEM, **FORCING,
        "x0": (_floats, None, "initial point (defaults to zeros)"),
        "horizon": (float, 1.0, "final time"),
        "dt": (float, 1e-3, "time step"),
        "tol_zero": (float, 1e-12, "snap-to-zero tolerance"),
    },
    "simulate": {
        **PROBLEM, **FORCING, **SDE,
        "x0": (_floats, None, "initial point (defaults to zeros)"),
        "replicas": (int, 1, "1 writes a trajectory; more writes per-replica summaries"),
    },
    "rate": {
        **PROBLEM, **FORCING,
        "path": (_json, None, "piecewise path {breakpoints, values, zero_flags} (JSON)"),
        "path_file": (str, None, "file holding the piecewise path JSON"),
    },
    "mollify": {
        **PROBLEM, **FORCING,
        "trajectory_file": (str, None, "trajectory CSV (t,x_1..x_d[,frozen_mask]); default: the flow from x0"),
        "x0": (_floats, None, "initial point of the default flow"),
        "dt": (float, 1e-3, "time step of the default flow"),
        "delta": (float, 0.05, "sup-distance tolerance"),
    },
    "ldp": {
        **PROBLEM,
        "x0": (_floats, None, "initial point (defaults to zeros)"),
        "cost": (_json, {"kind": "terminal", "z": [1.0], "c": 1.0, "M": 4.0}, "cost functional (JSON)"),
        "eps_list": (_floats, [0.5, 0.35, 0.25], "decreasing noise levels"),
        "dt": (float, 1e-3, "time step"),
        "scheme": (str, "proximal-splitting", f"one of {', '.join(SCHEMES)}"),
        "replicas": (int, 10_000, "Monte Carlo replicas per noise level"),
        "m": (int, 32, "breakpoints of the variational search"),
        "multistarts": (int, 16, "starts of the variational search"),
    },
    "gibbs": {
        **PROBLEM,
        "eps": (float, 1.0, "noise level"),
        "dt": (float, 1e-2, "time step of the Langevin run"),
        "horizon": (float, 2000.0, "length of the Langevin run"),
        "burn_in": (float, 0.1, "discarded fraction of the run"),
        "scheme": (str, "proximal-splitting", f"one of {', '.join(SCHEMES)}"),
        "decay": (_bool, True, "also run the exponential-decay check"),
        "test_fn": (str, "coordinate", f"decay test function: {', '.join(sorted(TEST_FUNCTIONS))}"),
        "times": (_floats, [0.0, 0.25, 0.5, 1.0, 2.0], "decay check times"),
        "decay_replicas": (int, 200, "initial points of the decay check"),
        "inner": (int, 200, "paths per initial point"),
    },
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _global_flags(parser, defaults):
    kw = (lambda v: {"default": v}) if defaults else (lambda v: {"default": argparse.SUPPRESS})
    parser.add_argument("--config", help="JSON configuration file (default: none)", **kw(None))
    parser.add_argument("--seed", type=int, help="unsigned 64-bit seed (default: 0)", **kw(0))
    parser.add_argument("--out", help="output directory (default: .)", **kw("."))
    parser.add_argument("--threads", type=int, help="worker threads; results do not depend on it (default: 1)",
                        **kw(1))


def build_parser():
    parser = _Parser(prog="lassoldp", description="Lasso diffusion: flows, simulation, rates and Laplace limits.")
    _global_flags(parser, defaults=True)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    for name, params in COMMANDS.items():
        p = sub.add_parser(name, help=f"run the {name} command")
        # global flags are also accepted after the subcommand
        _global_flags(p, defaults=False)
        for key, (_, default, text) in params.items():
            shown = json.dumps(default) if default is not None else "unset"
            p.add_argument("--" + key.replace("_", "-"), dest=key, default=None, help=f"{text} (default: {shown})")
    return parser


FILE_KEYS = ("problem", "path_file", "trajectory_file")


def _resolve(command, args, config, base):
    """Merge defaults, config and flags; config file paths become relative to the config's directory."""
    params = COMMANDS[command]
    out = {key: default for key, (_, default, _) in params.items()}
    paths = {}
    if "problem_file" in config and "problem" in params:
        config = {**config, "problem": config["problem_file"]}
    for source in (config, config.get(command, {})):
        if not isinstance(source, dict):
            raise InputError(f"config block {command!r} must be an object")
        for key in params:
            if key in source:
                out[key] = source[key]
                if key in FILE_KEYS and isinstance(source[key], str):
                    paths[key] = os.path.join(base, source[key])
    for key in params:
        val = getattr(args, key)
        if val is not None:
            out[key] = val
            paths.pop(key, None)
    for key, (conv, _, _) in params.items():
        if out[key] is not None:
            try:
                out[key] = conv(out[key])
            except (ValueError, TypeError, json.JSONDecodeError) as exc:
                raise InputError(f"--{key.replace('_', '-')}: {exc}") from exc
    return out, paths


def _load_config(path):
    if path is None:
        return {}, "."
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise InputError(f"{path}: top level must be an object")
    return data, os.path.dirname(os.path.abspath(path))


def _file(cfg, paths, key):
    return paths.get(key, cfg[key])


def _problem(cfg, paths, required=True):
    ref = cfg.get("problem")
    if isinstance(ref, dict):
        return Problem.from_dict(ref)
    if ref:
        return Problem.from_json(_file(cfg, paths, "problem"))
    if required:
        raise InputError("no problem given: use --problem or 'problem'/'problem_file' in the config")
    return None


def _model(cfg, paths):
    """A `ForcedModel` when a forcing is configured, else the `Problem`."""
    P = _problem(cfg, paths, required=cfg.get("forcing") is None)
    if cfg.get("forcing") is not None:
        f = ForcingPath.from_dict(cfg["forcing"])
        mu = cfg.get("mu") if cfg.get("mu") is not None else (P.mu if P is not None else None)
        if mu is None:
            raise InputError("forced system needs 'mu'")
        return ForcedModel(f, float(mu)), P
    return P, P


def _x0(cfg, d):
    x0 = np.zeros(d) if cfg.get("x0") is None else np.asarray(cfg["x0"], dtype=float)
    if x0.size != d:
        raise InputError(f"x0 has dimension {x0.size}, expected {d}")
    return x0


class Run:
    """Resolved invocation: writes files carrying a common header line."""

    def __init__(self, command, cfg, seed, out, problem):
        self.command, self.cfg, self.seed, self.out = command, cfg, seed, out
        info = {"command": command, "seed": seed, "config": cfg}
        if problem is not None:
            info["problem"] = problem.to_dict()
        self.header = json.dumps(info, sort_keys=True)

    def write(self, name, text):
        os.makedirs(self.out, exist_ok=True)
        with open(os.path.join(self.out, name), "w", newline="") as fh:
            fh.write(text)

    def write_json(self, name, payload):
        self.write(name, json.dumps({"header": json.loads(self.header), "result": payload},
                                    indent=2, sort_keys=True) + "\n")

    def rows(self, name, head, rows):
        fh = io.StringIO()
        fh.write(f"# {self.header}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(head)
        for r in rows:
            w.writerow(r)
        self.write(name, fh.getvalue())


def cmd_lasso(cfg, paths, seed, out, threads):
    P = _problem(cfg, paths)
    run = Run("lasso", cfg, seed, out, P)
    status = EXIT_OK
    try:
        res = lasso_solve(P, tol=cfg["tol"], max_iter=cfg["max_iter"], return_info=True)
        x, residual, iterations = res.x, res.residual, res.iterations
    except ConvergenceError as exc:
        x, residual, iterations = exc.x, exc.residual, exc.iterations
        print(str(exc), file=sys.stderr)
        status = EXIT_NUMERICAL
    rows = [[f"x_{i + 1}", fmt(v)] for i, v in enumerate(x)]
    rows += [["kkt_residual", fmt(residual)], ["iterations", iterations], ["converged", int(status == EXIT_OK)]]
    run.rows("lasso.csv", ["name", "value"], rows)
    print("x* =", "[" + ", ".join(fmt(v) for v in x) + "]")
    print("kkt_residual =", fmt(residual))
    return status


def cmd_flow(cfg, paths, seed, out, threads):
    model, P = _model(cfg, paths)
    run = Run("flow", cfg, seed, out, P)
    x0 = _x0(cfg, model.d)
    if isinstance(model, ForcedModel):
        traj = forced_flow_integrate(model.forcing, model.mu, x0, cfg["dt"], tol_zero=cfg["tol_zero"])
        exact = exact_piecewise_flow(model.forcing, model.mu, x0)
        run.write_json("flow_exact.json", exact.to_dict())
    else:
        traj = flow_integrate(P, x0, cfg["horizon"], cfg["dt"], tol_zero=cfg["tol_zero"])
    run.write("flow.csv", traj.to_csv(header=run.header))
    print("x(T) =", "[" + ", ".join(fmt(v) for v in traj.terminal) + "]")
    return EXIT_OK


def _sde_cfg(cfg, seed):
    return SdeConfig(eps=cfg["eps"], dt=cfg["dt"], horizon=cfg["horizon"], scheme=cfg["scheme"], seed=seed)


def cmd_simulate(cfg, paths, seed, out, threads):
    model, P = _model(cfg, paths)
    run = Run("simulate", cfg, seed, out, P)
    x0 = _x0(cfg, model.d)
    if isinstance(model, ForcedModel):
        scfg = _sde_cfg({**cfg, "horizon": model.forcing.horizon}, seed)
        spec = SimulationSpec("forced", x0, scfg, forcing=model.forcing, mu=model.mu)
    else:
        scfg = _sde_cfg(cfg, seed)
        spec = SimulationSpec("lasso", x0, scfg, problem=P)
    if cfg["replicas"] < 1:
        raise InputError("replicas must be at least 1")
    if cfg["replicas"] == 1:
        traj = simulate_forced(model.forcing, model.mu, x0, scfg) if isinstance(model, ForcedModel) \
            else simulate(P, x0, scfg)
        run.write("trajectory.csv", traj.to_csv(header=run.header))
        print("x(T) =", "[" + ", ".join(fmt(v) for v in traj.terminal) + "]")
        return EXIT_OK
    res = ensemble(spec, cfg["replicas"], seed, threads=threads)
    run.write("ensemble.csv", res.to_csv(header=run.header))
    rows = [[c, fmt(m), fmt(s)] for c, m, s in zip(res.columns, res.mean, res.stderr)]
    run.rows("ensemble_summary.csv", ["statistic", "mean", "stderr"], rows)
    for r in rows:
        print(f"{r[0]}: {r[1]} +- {r[2]}")
    return EXIT_OK


def _load_path(cfg, paths):
    if cfg.get("path") is not None:
        return PiecewisePath.from_dict(cfg["path"])
    if cfg.get("path_file"):
        try:
            with open(_file(cfg, paths, "path_file")) as fh:
                data = json.load(fh)
        except OSError as exc:
            raise InputError(f"cannot read path file: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise InputError(f"path file: invalid JSON ({exc})") from exc
        return PiecewisePath.from_dict(data.get("result", data))
    raise InputError("rate needs a path ('path' or 'path_file')")


def cmd_rate(cfg, paths, seed, out, threads):
    model, P = _model(cfg, paths)
    run = Run("rate", cfg, seed, out, P)
    rb = rate_functional(model, _load_path(cfg, paths))
    run.write("rate.csv", rb.to_csv(header=run.header))
    print("total =", fmt(rb.total))
    return EXIT_OK


def cmd_mollify(cfg, paths, seed, out, threads):
    model, P = _model(cfg, paths)
    run = Run("mollify", cfg, seed, out, P)
    if cfg.get("trajectory_file"):
        try:
            with open(_file(cfg, paths, "trajectory_file")) as fh:
                psi = Trajectory.from_csv(fh)
        except OSError as exc:
            raise InputError(f"cannot read trajectory: {exc}") from exc
    else:
        x0 = _x0(cfg, model.d)
        psi = forced_flow_integrate(model.forcing, model.mu, x0, cfg["dt"]) if isinstance(model, ForcedModel) \
            else flow_integrate(P, x0, 1.0, cfg["dt"])
    phi, info = mollify(psi, cfg["delta"], model, return_info=True)
    flags = ["".join("1" if f else "0" for f in row) for row in phi.zero_flags] + [""]
    rows = [[fmt(t)] + [fmt(v) for v in vals] + [fl] for t, vals, fl in zip(phi.breakpoints, phi.values, flags)]
    run.rows("mollified.csv", ["t"] + [f"x_{i + 1}" for i in range(phi.d)] + ["zero_flags"], rows)
    run.rows("mollify_info.csv", ["name", "value"], [
        ["sigma", fmt(info.sigma)], ["sup_distance", fmt(info.sup_distance)],
        ["rate", fmt(info.rate)], ["discrete_rate", fmt(info.discrete_rate)], ["halvings", info.halvings]])
    print(f"sigma = {fmt(info.sigma)}, sup distance = {fmt(info.sup_distance)}, "
          f"rate = {fmt(info.rate)} (discrete input rate {fmt(info.discrete_rate)})")
    return EXIT_OK


def cmd_ldp(cfg, paths, seed, out, threads):
    P = _problem(cfg, paths)
    run = Run("ldp", cfg, seed, out, P)
    x0 = _x0(cfg, P.d)
    h = CostFunctional.from_dict(cfg["cost"])
    scfg = SdeConfig(eps=cfg["eps_list"][0], dt=cfg["dt"], scheme=cfg["scheme"], seed=seed)
    rep = ldp_report(P, x0, h, cfg["eps_list"], scfg, cfg["replicas"], m=cfg["m"],
                     multistarts=cfg["multistarts"], threads=threads)
    run.write("ldp.csv", rep.to_csv(header=run.header))
    run.write_json("ldp.json", rep.to_dict())
    print("variational value =", fmt(rep.variational_value))
    for e, H, se, g in zip(rep.eps_values, rep.H_estimates, rep.std_errors, rep.gaps):
        print(f"eps={fmt(e)}: H={fmt(H)} +- {fmt(se)}, gap={fmt(g)}")
    return EXIT_OK


def cmd_gibbs(cfg, paths, seed, out, threads):
    P = _problem(cfg, paths)
    run = Run("gibbs", cfg, seed, out, P)
    spec = GibbsSpec(P, cfg["eps"])
    scfg = SdeConfig(eps=cfg["eps"], dt=cfg["dt"], horizon=cfg["horizon"], scheme=cfg["scheme"], seed=seed)
    lm = langevin_moments(spec, scfg, cfg["burn_in"])
    quad = quadrature_moments_1d(spec) if P.d == 1 else None
    rows = []
    for name, attr, se in (("mean", "mean", "stderr_mean"), ("variance", "variance", "stderr_variance"),
                           ("mean_abs", "mean_abs", "stderr_mean_abs")):
        for i in range(P.d):
            q = fmt(getattr(quad, attr)) if quad is not None else ""
            rows.append([f"{name}_{i + 1}", q, fmt(getattr(lm, attr)[i]), fmt(getattr(lm, se)[i])])
    rows.append(["ess", "", fmt(lm.ess), ""])
    run.rows("gibbs.csv", ["quantity", "quadrature", "langevin", "langevin_stderr"], rows)
    for r in rows:
        print(", ".join(r))
    if cfg["decay"]:
        if cfg["test_fn"] not in TEST_FUNCTIONS:
            raise InputError(f"unknown test function {cfg['test_fn']!r}")
        rep = variance_decay_check(spec, scfg, cfg["test_fn"], cfg["times"], cfg["decay_replicas"], cfg["inner"])
        run.write("decay.csv", rep.to_csv(header=run.header))
        print(f"decay bound holds at all times: {rep.all_hold} (C = {fmt(rep.C)})")
    return EXIT_OK


HANDLERS = {
    "lasso": cmd_lasso, "flow": cmd_flow, "simulate": cmd_simulate, "rate": cmd_rate,
    "mollify": cmd_mollify, "ldp": cmd_ldp, "gibbs": cmd_gibbs,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if not 0 <= args.seed < 2 ** 64:
            raise InputError("--seed must be an unsigned 64-bit integer")
        if args.threads < 1:
            raise InputError("--threads must be at least 1")
        config, base = _load_config(args.config)
        cfg, paths = _resolve(args.command, args, config, base)
        return HANDLERS[args.command](cfg, paths, args.seed, args.out, args.threads)
    except (ConvergenceError, NumericalError, ApproximationError) as exc:
        print(f"lassoldp {args.command}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (InputError, OSError) as exc:
        print(f"lassoldp {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except LassoLDPError as exc:
        print(f"lassoldp {args.command}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
