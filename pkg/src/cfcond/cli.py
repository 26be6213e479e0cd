"""Command-line interface: ``cfcond <subcommand> [flags]``.

Flags may also come from a flat ``key = value`` file given by
``--config``; flags on the command line win.  The default seed is read
from ``CFCOND_SEED`` (0 if unset).  Reports are JSON, raw data CSV.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import warnings

import numpy as np

from . import analysis, dynamics, oracle, rates, sampler, verify
from .errors import CfcondError
from .weights import Explicit, Geometric, PowerLaw

SEED_ENV = "CFCOND_SEED"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# config


def read_config(path: str) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment; dashes and underscores are equivalent."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{n}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _apply_config(parser: argparse.ArgumentParser, cfg: dict) -> None:
    known = {a.dest: a for a in parser._actions}
    defaults = {}
    for key, value in cfg.items():
        action = known.get(key)
        if action is None:
            raise UsageError(f"unknown config key '{key}'")
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            defaults[key] = value.lower() in ("1", "true", "yes", "on")
        elif action.type is not None:
            defaults[key] = action.type(value)
        else:
            defaults[key] = value
    parser.set_defaults(**defaults)


# ---------------------------------------------------------------------------
# shared arguments


def _floats(text: str) -> list:
    return [float(x) for x in text.replace(",", " ").split()]


def _add_family(p):
    g = p.add_argument_group("weights")
    g.add_argument("--family", choices=["power_law", "geometric", "explicit"])
    g.add_argument("--b", type=float, help="power-law exponent")
    g.add_argument("--phi-c", type=float, help="power-law radius of convergence")
    g.add_argument("--z", type=float, help="geometric ratio")
    g.add_argument("--head", type=str, help="explicit weights Q_1..Q_R, comma separated")


def _add_mass(p):
    g = p.add_argument_group("system size")
    g.add_argument("--V", type=float, help="volume")
    g.add_argument("--M", type=int, help="total mass")
    g.add_argument("--rho", type=float, help="density; M = ceil(rho V)")
    g.add_argument("--rho-over-rhoc", type=float,
                   help="density as a multiple of rho_c (1.0 means rho = rho_c)")


def _add_io(p, fmt="json"):
    p.add_argument("--out", type=str, default="-", help="output file ('-' for stdout)")
    p.add_argument("--seed", type=int, default=None, help=f"master seed (default ${SEED_ENV} or 0)")
    p.add_argument("--workers", type=int, default=1)


def _weights(args):
    family = args.family
    if family is None:
        if args.b is not None or args.phi_c is not None:
            family = "power_law"
        elif args.z is not None:
            family = "geometric"
        elif args.head is not None:
            family = "explicit"
        else:
            raise UsageError("no weight family given (use --family or --b/--phi-c, --z, --head)")
    if family == "power_law":
        if args.b is None or args.phi_c is None:
            raise UsageError("power_law needs --b and --phi-c")
        return PowerLaw(args.b, args.phi_c)
    if family == "geometric":
        if args.z is None:
            raise UsageError("geometric needs --z")
        return Geometric(args.z)
    if args.head is None:
        raise UsageError("explicit needs --head")
    return Explicit(tuple(_floats(args.head)))


def _mass(args, W) -> int:
    given = [x is not None for x in (args.M, args.rho, args.rho_over_rhoc)]
    if sum(given) != 1:
        raise UsageError("give exactly one of --M, --rho, --rho-over-rhoc")
    if args.M is not None:
        if args.M < 1:
            raise UsageError("--M must be positive")
        return args.M
    rho = args.rho if args.rho is not None else args.rho_over_rhoc * W.rho_c
    if rho <= 0:
        raise UsageError("density must be positive")
    return max(1, math.ceil(rho * args.V))


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    return int(os.environ.get(SEED_ENV, "0"))


class _Output:
    def __init__(self, path: str):
        self.path = path

    def __enter__(self):
        self.fh = sys.stdout if self.path == "-" else open(self.path, "w", encoding="utf-8",
                                                            newline="")
        return self.fh

    def __exit__(self, *exc):
        if self.fh is not sys.stdout:
            self.fh.close()


def _write_json(path: str, obj) -> None:
    with _Output(path) as fh:
        fh.write(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False))
        fh.write("\n")


def _write_csv(path: str, header, rows) -> None:
    with _Output(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# ---------------------------------------------------------------------------
# subcommands


def cmd_rates(args) -> int:
    W = _weights(args)
    rho = args.rho if args.rho is not None else W.rho_c * (args.rho_over_rhoc or 1.0)
    n = args.j_max + 1
    c = rates.equilibrium_density(W, rho, n)
    if args.profile == "equilibrium":
        ell = c
    elif args.profile == "zero":
        ell = np.zeros(n)
    else:
        r = np.arange(1, n + 1)
        ell = c * (1 + args.perturb * r ** -2.0)
        ell *= rates.mass(c) / rates.mass(ell)
    seq, full = rates.sup_convergence(W, rho, ell, args.j_max)
    rows = [(j, repr(float(v))) for j, v in enumerate(seq, 1)]
    rows.append(("sup", repr(float(full))))
    _write_csv(args.out, ["j", "J_rho_j"], rows)
    return 0


def cmd_exact(args) -> int:
    W = _weights(args)
    M = _mass(args, W)
    V = args.V
    if args.what == "pi":
        m = oracle.pi_exact(W, V, M)
        rows = [(str(c), repr(p)) for c, p in sorted(m.probs.items(), key=lambda kv: -kv[1])]
        _write_csv(args.out, ["configuration", "probability"], rows)
    elif args.what == "marginal":
        pmf = oracle.conditional_marginal_pmf(W, V, M, args.r).pmf()
        _write_csv(args.out, ["k", "probability"], [(k, repr(float(p))) for k, p in enumerate(pmf)])
    elif args.what == "largest":
        pmf = oracle.largest_cluster_pmf_upper(W, V, M)
        rows = [(k, repr(float(pmf[k]))) for k in range(M // 2 + 1, M + 1)]
        _write_csv(args.out, ["k", "probability"], rows)
    elif args.what == "compound":
        m_max = args.m_max or M
        pmf = oracle.compound_from_rates(oracle.tilted_rates(W, V, m_max, 1.0), m_max).pmf()
        _write_csv(args.out, ["m", "probability"], [(m, repr(float(p))) for m, p in enumerate(pmf)])
    else:
        log_p = oracle.log_prob_total(W, V, M, 1.0)
        _write_json(args.out, {"V": V, "M": M, "log_P_total": log_p,
                               "log_Z": oracle.log_partition(W, V, M)})
    return 0


def cmd_sample(args) -> int:
    W = _weights(args)
    M = _mass(args, W)
    seed = _seed(args)
    kind = args.sampler
    if kind == "auto":
        smp = analysis.make_sampler(W, args.V, M)
    elif kind == "sequential":
        smp = sampler.SequentialSampler(W, args.V, M)
    elif kind == "rejection":
        smp = sampler.RejectionSampler(W, args.V, M)
    else:
        smp = sampler.SplitSampler(W, args.V, M)
    configs = smp.draw(sampler.ReplicaRng(seed), args.n_samples)
    if args.summary:
        K = np.array([c.largest for c in configs])
        n_cl = np.array([c.n_clusters for c in configs])
        _write_json(args.out, {"V": args.V, "M": M, "n": len(configs), "seed": seed,
                               "mean_largest": float(K.mean()), "sd_largest": float(K.std()),
                               "mean_clusters": float(n_cl.mean())})
    else:
        with _Output(args.out) as fh:
            for c in configs:
                fh.write(f"{c}\n")
    return 0


def _kernel(args, W, n_max):
    if args.kernel == "bd":
        if args.a_r is not None or args.b_r is not None:
            if args.a_r is None or args.b_r is None:
                raise UsageError("--a-r and --b-r go together")
            a_r, b_r = _floats(args.a_r), _floats(args.b_r)
            if len(a_r) < n_max - 1:
                raise UsageError(f"need {n_max - 1} Becker-Doring rates, got {len(a_r)}")
            return dynamics.becker_doring(a_r[:n_max - 1], b_r[:n_max - 1])
        if args.from_balance:
            return dynamics.fragmentation_from_balance(
                dynamics.becker_doring(np.ones(n_max - 1), np.ones(n_max - 1)), W, n_max)
        return dynamics.becker_doring_power(args.bd_b, n_max)
    if args.from_balance:
        return dynamics.fragmentation_from_balance(lambda i, j: 1.0, W, n_max)
    return dynamics.constant_kernel(n_max)


def _dyn_weights(args):
    try:
        return _weights(args)
    except UsageError:
        if args.from_balance:
            raise
        return None


def cmd_dynamics(args) -> int:
    W = _dyn_weights(args)
    if args.M is None:
        raise UsageError("dynamics needs --M")
    kernel = _kernel(args, W, max(args.M, 2))
    trace = dynamics.gillespie_run(kernel, [args.M], args.V, args.t_end,
                                   sampler.ReplicaRng(_seed(args)), same_size=args.same_size)
    means = dynamics.occupation_means(trace, args.burn_in)
    rows = [(r, repr(float(m)), repr(float(m / args.V))) for r, m in enumerate(means, 1) if m > 0]
    _write_csv(args.out, ["r", "mean_count", "mean_density"], rows)
    if args.summary:
        _write_json(args.summary, {"V": args.V, "M": args.M, "t_end": args.t_end,
                                   "events": trace.n_events, "burn_in": args.burn_in,
                                   "mass_check": float(np.dot(np.arange(1, len(means) + 1), means))})
    return 0


def cmd_ode(args) -> int:
    W = _dyn_weights(args)
    kernel = _kernel(args, W, args.R + 1)
    rho = args.rho if args.rho is not None else 1.0
    sol = dynamics.solve_cf_ode(kernel, [rho], args.R, args.t_end, args.dt,
                                save_dt=args.save_dt, boundary=args.boundary)
    show = min(args.R, args.show)
    header = ["t", "mass"] + [f"c_{r}" for r in range(1, show + 1)]
    rows = [[repr(float(t)), repr(float(m))] + [repr(float(v)) for v in prof[:show]]
            for t, m, prof in zip(sol.times, sol.mass, sol.profiles)]
    _write_csv(args.out, header, rows)
    return 0


def cmd_condense(args) -> int:
    W = _weights(args)
    M = _mass(args, W)
    seed = _seed(args)
    policy = analysis.ThresholdPolicy(eps=args.eps)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = analysis.condensation_experiment(W, args.V, M, args.n, seed, k=3, policy=policy,
                                               workers=args.workers)
    reports = [analysis.lln_test(W, res), analysis.marginal_clt_test(W, res, seed),
               analysis.bulk_equivalence_test(W, res)]
    try:
        reports.append(analysis.fluctuation_test(W, res, seed))
    except CfcondError:
        pass
    _write_json(args.out, [r.to_dict() for r in reports])
    if args.samples_csv:
        z = (res.K - (res.M - W.rho_c * res.V)) / math.sqrt(res.V)
        _write_csv(args.samples_csv, ["K", "standardized"],
                   [(int(k), repr(float(v))) for k, v in zip(res.K, z)])
    return 0


def cmd_diagnose(args) -> int:
    W = _weights(args)
    policy = analysis.ThresholdPolicy(eps=args.eps, gamma=args.gamma)
    reports = []
    if args.what in ("assumptions", "all"):
        reports.append(analysis.assumption_diagnostics(W, args.m_max, policy=policy,
                                                       m_intermediate=args.m_intermediate))
    if args.what in ("local-limit", "all"):
        for V in args.V_grid:
            reports.append(analysis.local_limit_check(W, V, policy))
    if args.what in ("free-energy", "all"):
        rho = args.rho if args.rho is not None else W.rho_c
        reports.append(analysis.free_energy_check(W, rho, args.V_grid))
    _write_json(args.out, [r.to_dict() for r in reports])
    return 0


def cmd_verify(args) -> int:
    reports = verify.run_suite(quick=args.quick)
    _write_json(args.out, [r.to_dict() for r in reports])
    failed = [r.experiment for r in reports if not r.passed]
    if failed:
        print(f"failed: {', '.join(failed)}", file=sys.stderr)
        return 2
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cfcond", description=__doc__.splitlines()[0])
    parser.add_argument("--config", type=str,
                        help="flat key = value file of flag defaults (may appear anywhere)")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("rates", help="J_{rho,j} sequence and J_rho")
    _add_family(p)
    p.add_argument("--rho", type=float)
    p.add_argument("--rho-over-rhoc", type=float)
    p.add_argument("--j-max", type=int, default=64)
    p.add_argument("--profile", choices=["equilibrium", "zero", "perturbed"], default="perturbed")
    p.add_argument("--perturb", type=float, default=0.1)
    _add_io(p)
    p.set_defaults(func=cmd_rates)

    p = sub.add_parser("exact", help="exact laws from the oracles")
    _add_family(p)
    _add_mass(p)
    p.add_argument("--what", choices=["pi", "marginal", "largest", "compound", "total"],
                   default="pi")
    p.add_argument("--r", type=int, default=1, help="cluster size for --what marginal")
    p.add_argument("--m-max", type=int, help="pmf length for --what compound (default M)")
    _add_io(p)
    p.set_defaults(func=cmd_exact)

    p = sub.add_parser("sample", help="exact draws from the invariant measure")
    _add_family(p)
    _add_mass(p)
    p.add_argument("--n-samples", type=int, default=10)
    p.add_argument("--sampler", choices=["auto", "sequential", "rejection", "split"], default="auto")
    p.add_argument("--summary", action="store_true")
    _add_io(p)
    p.set_defaults(func=cmd_sample)

    for name, fn in (("dynamics", cmd_dynamics), ("ode", cmd_ode)):
        p = sub.add_parser(name, help="stochastic dynamics" if name == "dynamics"
                           else "mean-field coagulation-fragmentation equation")
        _add_family(p)
        p.add_argument("--kernel", choices=["bd", "constant"], default="bd")
        p.add_argument("--bd-b", type=float, default=3.5,
                       help="Becker-Doring exponent: a_r = 1, b_{r+1} = (1 + 1/r)^b")
        p.add_argument("--a-r", type=str)
        p.add_argument("--b-r", type=str)
        p.add_argument("--from-balance", action="store_true",
                       help="fragmentation rates from detailed balance with the weights")
        p.add_argument("--t-end", type=float, default=5.0)
        if name == "dynamics":
            p.add_argument("--V", type=float)
            p.add_argument("--M", type=int)
            p.add_argument("--burn-in", type=float, default=0.0)
            p.add_argument("--same-size", choices=["falling", "literal"], default="falling")
            p.add_argument("--summary", type=str, help="write a JSON summary here")
        else:
            p.add_argument("--rho", type=float, help="initial monomer density")
            p.add_argument("--R", type=int, default=200)
            p.add_argument("--dt", type=float, default=0.01)
            p.add_argument("--save-dt", type=float, default=1.0)
            p.add_argument("--boundary", choices=["closed", "outflow"], default="closed")
            p.add_argument("--show", type=int, default=20, help="sizes written to the CSV")
        _add_io(p)
        p.set_defaults(func=fn)

    p = sub.add_parser("condense", help="condensation experiment with statistical reports")
    _add_family(p)
    _add_mass(p)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--eps", type=float, default=analysis.DEFAULT_EPS)
    p.add_argument("--samples-csv", type=str)
    _add_io(p)
    p.set_defaults(func=cmd_condense)

    p = sub.add_parser("diagnose", help="heavy-tail and local-limit diagnostics")
    _add_family(p)
    p.add_argument("--what", choices=["assumptions", "local-limit", "free-energy", "all"],
                   default="all")
    p.add_argument("--m-max", type=int, default=2000)
    p.add_argument("--m-intermediate", type=int, default=None)
    p.add_argument("--V-grid", type=_floats, default=[50.0, 100.0, 200.0])
    p.add_argument("--rho", type=float)
    p.add_argument("--eps", type=float, default=analysis.DEFAULT_EPS)
    p.add_argument("--gamma", type=float, default=analysis.DEFAULT_GAMMA)
    _add_io(p)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("verify", help="oracle-equivalence suite")
    p.add_argument("--quick", action="store_true", help="masses up to 8 only")
    _add_io(p)
    p.set_defaults(func=cmd_verify)
    return parser


def _split_config(argv: list) -> tuple:
    """Pull ``--config PATH`` out of ``argv`` wherever it appears."""
    rest, path = [], None
    it = iter(argv)
    for tok in it:
        if tok == "--config":
            path = next(it, None)
            if path is None:
                raise UsageError("--config needs a path")
        elif tok.startswith("--config="):
            path = tok.split("=", 1)[1]
        else:
            rest.append(tok)
    return path, rest


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    subparsers = parser._subparsers._group_actions[0].choices
    usage = parser
    try:
        path, argv = _split_config(argv)
        command = next((a for a in argv if a in subparsers), None)
        if command is None:
            if any(a in ("-h", "--help") for a in argv):
                parser.print_help()
                return 0
            raise UsageError("missing subcommand")
        usage = subparsers[command]
        if path:
            _apply_config(usage, read_config(path))
        args = parser.parse_args(argv)
        if hasattr(args, "V") and args.V is None:
            raise UsageError("--V is required")
        return args.func(args)
    except UsageError as exc:
        usage.print_usage(sys.stderr)
        print(f"cfcond: error: {exc}", file=sys.stderr)
        return 1
    except (CfcondError, ValueError, OSError) as exc:
        print(f"cfcond: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
