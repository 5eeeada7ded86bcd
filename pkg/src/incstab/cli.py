"""Command-line front end.

Every subcommand writes its artifacts into ``--out`` (created if missing):
a deterministic result file (sorted keys, no timestamps) and a separate
``metadata.json`` holding the wall-clock time and versions. Exit codes:
0 pass / nothing found / success, 1 violation or counterexample found,
2 usage, configuration or runtime error (one line on stderr).

Randomness: a run has one root seed. Sampled checks draw chunk ``k`` from
``numpy.random.default_rng([seed, k])``; ensembles use ``default_rng(seed)``.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .augment import AugmentedSystem, augment_gas, augment_iss
from .certificate import (
    Budget,
    Sampler,
    certificate_from_dict,
    check_decrease_gas,
    check_decrease_iss,
    check_sandwich,
    check_ugas,
    combine,
    falsify,
    gas_decrease_condition,
    iss_decrease_condition,
    sandwich_condition,
    ugas_decrease_condition,
    ugas_sandwich_condition,
)
from .comparison import KInfFn, KLFn, construct_rho
from .envelope import Ensemble, estimate_gas_envelope, estimate_iss_gain, validate_ugas
from .errors import IncStabError
from .metric import metric_from_dict
from .sets import Box
from .system import ControlSystem, InputSignal, constant_signal, integrate, random_signal

LABEL = "empirical, sampled"


class UsageError(Exception):
    pass


def load_schema(name):
    text = resources.files("incstab").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


def _json_arg(value, what):
    """Inline JSON (starting with ``{`` or ``[``) or a path to a JSON file."""
    text = value.strip()
    if not text.startswith(("{", "[")):
        path = Path(value)
        if not path.is_file():
            raise UsageError(f"{what} file not found: {value}")
        text = path.read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise UsageError(f"{what} is not valid JSON: {e}") from None


def _validated(value, what, schema):
    data = _json_arg(value, what)
    try:
        jsonschema.validate(data, load_schema(schema))
    except jsonschema.ValidationError as e:
        where = "/".join(str(p) for p in e.absolute_path) or "top level"
        raise UsageError(f"{what} fails the {schema} schema at {where}: {e.message}") from None
    return data


def load_system(value):
    """A system JSON; iss-mode augmented systems are rebuilt from their construction block."""
    d = _validated(value, "system", "system")
    c = d.get("construction")
    if c and c.get("mode") == "iss":
        return AugmentedSystem.from_dict(d)
    return ControlSystem.from_dict(d)


def _domain(args, n):
    lo, hi = args.domain
    if not lo < hi:
        raise UsageError("--domain needs lo < hi")
    return Box.cube(lo, hi, n)


def _dump(obj, path):
    path.write_text(json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n")


def _write_metadata(out, args, argv):
    meta = {
        "argv": list(argv),
        "command": args.command,
        "seed": getattr(args, "seed", None),
        "seed_derivation": "sampling chunk k uses default_rng([seed, k]); ensembles use default_rng(seed)",
        "created_unix": time.time(),
        "version": __version__,
        "numpy": np.__version__,
    }
    _dump(meta, out / "metadata.json")


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def _load_check_inputs(args):
    sys_ = load_system(args.system)
    cert_d = _validated(args.certificate, "certificate", "certificate")
    if args.mode == "iss" and "sigma" not in cert_d:
        raise UsageError("an iss certificate needs sigma")
    if args.mode == "ugas" and "target" not in cert_d:
        raise UsageError("a ugas certificate needs target")
    cert = certificate_from_dict(cert_d, sys_.n, args.mode)
    return sys_, cert


def _name(sys_):
    return sys_.base.name + "_augmented" if isinstance(sys_, AugmentedSystem) else sys_.name


def cmd_check(args):
    sys_, cert = _load_check_inputs(args)
    dom = _domain(args, sys_.n)
    sampler = Sampler(args.samples, args.seed, args.sampler)
    if args.mode == "gas":
        rep = combine("gas", [check_sandwich(cert, dom, sampler), check_decrease_gas(cert, sys_, dom, sampler)])
    elif args.mode == "iss":
        rep = combine("iss", [
            check_sandwich(cert, dom, sampler),
            check_decrease_iss(cert, sys_, dom, sampler, args.iss_form),
        ])
    else:
        rep = check_ugas(cert, sys_, dom, sampler)
    result = {
        "command": "check",
        "mode": args.mode,
        "system": _name(sys_),
        "certificate": cert.to_dict(),
        "domain": {"lo": dom.lo.tolist(), "hi": dom.hi.tolist()},
        "seed": args.seed,
        "sampler": {"kind": args.sampler, "count": args.samples},
        "verdict": rep.verdict,
        "label": LABEL,
        "report": rep.to_dict(),
    }
    _dump(result, args.out / "report.json")
    return 0 if rep.passed else 1


def cmd_falsify(args):
    sys_, cert = _load_check_inputs(args)
    dom = _domain(args, sys_.n)
    if args.mode == "gas":
        conds = [sandwich_condition(cert, dom), gas_decrease_condition(cert, sys_, dom)]
    elif args.mode == "iss":
        conds = [sandwich_condition(cert, dom), iss_decrease_condition(cert, sys_, dom, args.iss_form)]
    else:
        conds = [ugas_sandwich_condition(cert, dom), ugas_decrease_condition(cert, sys_, dom)]
    budget = Budget(args.samples, args.refine_steps)
    found = []
    for cond in conds:
        cex = falsify(cond, budget, args.seed)
        if cex is not None:
            found.append(cex.to_dict())
    result = {
        "command": "falsify",
        "mode": args.mode,
        "system": _name(sys_),
        "certificate": cert.to_dict(),
        "domain": {"lo": dom.lo.tolist(), "hi": dom.hi.tolist()},
        "seed": args.seed,
        "budget": {"samples": budget.samples, "refine_steps": budget.refine_steps},
        "searched": [c.name for c in conds],
        "counterexamples": found,
        "verdict": "counterexample found" if found else "none found",
        "label": LABEL,
    }
    _dump(result, args.out / "report.json")
    return 1 if found else 0


def cmd_simulate(args):
    sys_ = load_system(args.system)
    x0 = np.asarray(args.x0, dtype=float)
    if x0.shape != (sys_.n,):
        raise UsageError(f"--x0 needs {sys_.n} values")
    sig = None
    if sys_.m:
        if args.signal is not None:
            d = _json_arg(args.signal, "signal")
            sig = InputSignal(d["values"], float(d["dt"]))
        elif args.input is not None:
            sig = constant_signal(args.input, args.horizon, args.signal_dt)
        else:
            rng = np.random.default_rng(args.seed)
            sig = random_signal(sys_.input_set, args.horizon, args.signal_dt, rng)
    tr = integrate(sys_, x0, sig, args.horizon, args.step, args.record_every)
    tr.to_csv(args.out / "trajectory.csv")
    return 0


def cmd_augment(args):
    sys_ = load_system(args.system)
    if isinstance(sys_, AugmentedSystem):
        raise UsageError("the system is already augmented")
    if args.mode == "gas":
        asys = augment_gas(sys_)
    else:
        if args.metric is None or args.rho is None:
            raise UsageError("iss augmentation needs --metric and --rho")
        metric = metric_from_dict(_json_arg(args.metric, "metric"), sys_.n)
        asys = augment_iss(sys_, metric, KInfFn.from_dict(_json_arg(args.rho, "rho")))
    _dump(asys.to_dict(), args.out / "augmented.json")
    return 0


def cmd_envelope(args):
    sys_ = load_system(args.system)
    ens = Ensemble(pairs=args.pairs, horizon=args.horizon, step=args.step, signal_dt=args.signal_dt,
                   record_dt=args.record_dt, seed=args.seed)
    if args.kind == "ugas":
        if not isinstance(sys_, AugmentedSystem):
            if args.metric is None or args.rho is None:
                raise UsageError("ugas validation needs an iss-augmented system or --metric and --rho")
            metric = metric_from_dict(_json_arg(args.metric, "metric"), sys_.n)
            sys_ = augment_iss(sys_, metric, KInfFn.from_dict(_json_arg(args.rho, "rho")))
        fit = validate_ugas(sys_, ens)
    else:
        if args.metric is None:
            raise UsageError("--metric is required")
        metric = metric_from_dict(_json_arg(args.metric, "metric"), sys_.n)
        if args.kind == "gas":
            fit = estimate_gas_envelope(sys_, metric, ens)
        else:
            if args.beta is None:
                raise UsageError("iss gain fitting needs --beta")
            beta = KLFn.from_dict(_json_arg(args.beta, "beta"))
            fit = estimate_iss_gain(sys_, metric, beta, ens, args.family)
    _dump(fit.to_dict(), args.out / "envelope.json")
    fit.data.write_csv(args.out / "traces.csv")
    return 0 if fit.exists else 1


def cmd_rho(args):
    beta = KLFn.from_dict(_json_arg(args.beta, "beta"))
    gamma = KInfFn.from_dict(_json_arg(args.gamma, "gamma"))
    rho = construct_rho(beta, gamma)
    _dump({"rho": rho.to_dict(), "beta": beta.to_dict(), "gamma": gamma.to_dict()}, args.out / "rho.json")
    return 0


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(2, f"{self.prog}: error: {message}\n")


def _common(p, seed=True):
    p.add_argument("--out", type=Path, default=Path("incstab-out"), help="output directory")
    if seed:
        p.add_argument("--seed", type=int, default=0, help="root seed (recorded in every artifact)")


def _check_args(p):
    p.add_argument("--mode", choices=["gas", "iss", "ugas"], required=True)
    p.add_argument("--system", required=True, help="system JSON file or inline JSON")
    p.add_argument("--certificate", required=True, help="certificate JSON file or inline JSON")
    p.add_argument("--domain", nargs=2, type=float, default=[-2.0, 2.0], metavar=("LO", "HI"),
                   help="state box [LO, HI]^n (default -2 2)")
    p.add_argument("--samples", type=int, default=10000)
    p.add_argument("--iss-form", choices=["sum", "implication"], default="sum")
    _common(p)


def build_parser():
    parser = _Parser(prog="incstab", description="Check, falsify and validate incremental-stability certificates.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("check", help="sampled check of a certificate")
    _check_args(p)
    p.add_argument("--sampler", choices=["random", "grid"], default="random")

    p = sub.add_parser("falsify", help="search for a counterexample")
    _check_args(p)
    p.add_argument("--refine-steps", type=int, default=200)

    p = sub.add_parser("simulate", help="integrate one trajectory to CSV")
    p.add_argument("--system", required=True)
    p.add_argument("--x0", nargs="+", type=float, required=True)
    p.add_argument("--input", nargs="+", type=float, help="constant input value")
    p.add_argument("--signal", help='signal JSON {"dt": ..., "values": [[...], ...]}')
    p.add_argument("--signal-dt", type=float, default=0.5, help="grid of random or constant signals")
    p.add_argument("--horizon", type=float, default=10.0)
    p.add_argument("--step", type=float, default=1e-3)
    p.add_argument("--record-every", type=int, default=1)
    _common(p)

    p = sub.add_parser("augment", help="write the doubled system")
    p.add_argument("--mode", choices=["gas", "iss"], required=True)
    p.add_argument("--system", required=True)
    p.add_argument("--metric", help="metric JSON (iss mode)")
    p.add_argument("--rho", help="rho JSON (iss mode)")
    _common(p, seed=False)

    p = sub.add_parser("envelope", help="fit a KL envelope or ISS gain to simulated pairs")
    p.add_argument("--kind", choices=["gas", "iss", "ugas"], required=True)
    p.add_argument("--system", required=True)
    p.add_argument("--metric")
    p.add_argument("--beta", help="KL function JSON (iss kind)")
    p.add_argument("--rho", help="rho JSON (ugas kind on a plain system)")
    p.add_argument("--family", choices=["linear", "power"], default="linear")
    p.add_argument("--pairs", type=int, default=50)
    p.add_argument("--horizon", type=float, default=10.0)
    p.add_argument("--step", type=float, default=1e-3)
    p.add_argument("--signal-dt", type=float, default=0.5)
    p.add_argument("--record-dt", type=float, default=0.05)
    _common(p)

    p = sub.add_parser("rho", help="construct the disturbance scaling rho from beta and gamma")
    p.add_argument("--beta", required=True)
    p.add_argument("--gamma", required=True)
    _common(p, seed=False)
    return parser


COMMANDS = {
    "check": cmd_check,
    "falsify": cmd_falsify,
    "simulate": cmd_simulate,
    "augment": cmd_augment,
    "envelope": cmd_envelope,
    "rho": cmd_rho,
}


def _one_line(e):
    return " ".join(str(e).split()) or type(e).__name__


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        code = COMMANDS[args.command](args)
        _write_metadata(args.out, args, argv)
        return code
    except (UsageError, IncStabError, OSError, ValueError) as e:
        print(f"incstab: error: {_one_line(e)}", file=sys.stderr)
        return 2
    except Exception as e:  # keep the exit-code contract exhaustive
        print(f"incstab: error: {type(e).__name__}: {_one_line(e)}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
