"""Command-line entry point.

Exit status: 0 success, 1 validation error, 2 resource-guard rejection,
3 failed lemma suite.  Floats are written with the shortest repr that
round-trips the double exactly.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import warnings

import numpy as np

from .errors import ResourceError, ValidationError
from .exactdist import DpConfig, default_config, exact_pmf
from .experiments import rate_study, write_rates_csv
from .lemma_oracles import run_suite, summarize
from .metrics import Pmf, local_distance, total_variation
from .moments import Statistic, moments
from .occusim import conditional_mc_law, decomposition_estimate, empirical_mc_law
from .tpoisson import fit_tp, tp_pmf_window
from .weights import model_from_dict

EXIT_OK, EXIT_INVALID, EXIT_RESOURCE, EXIT_SUITE = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(f"arguments: {message}")


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 1 << 64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {v}")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _load_json(path: str, what: str):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ValidationError(f"{what}: cannot read {path!r} ({exc.strerror})") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{what}: malformed JSON in {path!r} (line {exc.lineno})") from None


def _model(args):
    return model_from_dict(_load_json(args.model, "model"))


def _stat(args) -> Statistic:
    stat = Statistic.parse(args.stat)
    if getattr(args, "restricted_from", None):
        stat = stat.restricted(args.restricted_from)
    return stat


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def _emit(text: str, out: str | None):
    if out is None:
        sys.stdout.write(text)
        return
    parent = os.path.dirname(os.path.abspath(out))
    if not os.path.isdir(parent):
        raise ValidationError(f"out: parent directory {parent!r} does not exist")
    with open(out, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _emit_json(obj, out):
    _emit(json.dumps(_clean(obj), indent=2) + "\n", out)


# -- subcommands -----------------------------------------------------------------

def cmd_moments(args):
    m = moments(_model(args), args.n, _stat(args), args.mode)
    _emit_json(m.to_dict(), args.out)


def cmd_exact_pmf(args):
    model = _model(args)
    cfg = DpConfig(args.J, args.prune_eps) if args.J else default_config(model, args.n, args.prune_eps)
    _emit_json(exact_pmf(model, args.n, _stat(args), cfg).to_dict(), args.out)


def cmd_tp_fit(args):
    _emit_json(fit_tp(args.mu, args.var).to_dict(), args.out)


def cmd_distance(args):
    P = Pmf.from_dict(_load_json(args.pmf, "pmf"))
    if args.other:
        Q = Pmf.from_dict(_load_json(args.other, "other"))
    elif args.mu is not None and args.var is not None:
        Q = tp_pmf_window(fit_tp(args.mu, args.var))
    else:
        raise ValidationError("distance: give --other or both --mu and --var")
    tv, loc = total_variation(P, Q), local_distance(P, Q)
    _emit_json({"tv": tv.value, "tv_uncertainty": tv.uncertainty,
                "loc": loc.value, "loc_uncertainty": loc.uncertainty}, args.out)


def cmd_simulate(args):
    sampler = conditional_mc_law if args.estimator == "conditional" else empirical_mc_law
    est = sampler(_model(args), args.n, _stat(args), args.reps, args.seed, args.threads)
    out = est.pmf.to_dict()
    out.update(se=est.se, reps=est.reps, estimator=est.estimator, seed=args.seed)
    _emit_json(out, args.out)


def cmd_decompose(args):
    dec = decomposition_estimate(_model(args), args.n, _stat(args), args.reps, args.seed,
                                 args.threads)
    _emit_json(dec.to_dict(include_u=not args.no_u), args.out)


def cmd_rates(args):
    try:
        grid = [int(x) for x in args.grid.split(",") if x.strip()]
    except ValueError:
        raise ValidationError(f"grid: expected comma-separated integers, got {args.grid!r}") from None
    method = "monte_carlo" if args.method == "mc" else "exact"
    if method == "monte_carlo" and args.seed is None:
        raise ValidationError("seed: --seed is required with --method mc")
    study = rate_study(_model(args), Statistic.parse(args.stat), grid, method, args.samples,
                       args.seed, args.estimator, args.threads)
    _emit(write_rates_csv(study.rows), args.out)
    summary = study.to_dict()
    del summary["rows"]
    sys.stderr.write(json.dumps(_clean(summary)) + "\n")


def cmd_lemmas(args):
    reports = run_suite(args.seed, args.count)
    rows = summarize(reports)
    _emit_json(rows, args.out)
    return EXIT_SUITE if any(r["fail"] for r in rows) else EXIT_OK


# -- parser ----------------------------------------------------------------------

def _common(p, stat=True):
    p.add_argument("--model", required=True, metavar="PATH",
                   help="model JSON: {\"kind\": \"explicit\", \"probs\": [...]} or "
                        "{\"kind\": \"zeta\", \"exponent\": a}")
    p.add_argument("--n", type=_positive_int, required=True, help="number of balls (count)")
    if stat:
        p.add_argument("--stat", required=True, metavar="kn|knr:R",
                       help="kn = occupied boxes; knr:R = boxes holding exactly R balls")
        p.add_argument("--restricted-from", type=_positive_int, metavar="J",
                       help="count only boxes with index >= J (box index)")


def _seed(p, required=True):
    p.add_argument("--seed", type=_u64, required=required,
                   help="RNG seed, unsigned 64-bit integer (no default)")
    p.add_argument("--threads", type=_positive_int, default=1,
                   help="worker threads (count); output does not depend on it")


def _out(p, what="JSON"):
    p.add_argument("--out", metavar="PATH", help=f"write {what} here instead of stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="occupancy-tp",
                     description="Occupancy statistics and translated Poisson approximation")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("moments", help="mean and variance of K_n or K_{n,r}")
    _common(p)
    p.add_argument("--mode", choices=["auto", "exact", "hybrid"], default="auto",
                   help="exact pairwise sums or the certified large-scale mode")
    _out(p)
    p.set_defaults(func=cmd_moments)

    p = sub.add_parser("exact-pmf", help="exact law by dynamic programming")
    _common(p)
    p.add_argument("--J", type=_positive_int, help="number of boxes processed (box count)")
    p.add_argument("--prune-eps", type=float, default=0.0,
                   help="drop states below this probability, in [0, 1e-9]")
    _out(p)
    p.set_defaults(func=cmd_exact_pmf)

    p = sub.add_parser("tp-fit", help="translated Poisson parameters from mean and variance")
    p.add_argument("--mu", type=float, required=True, help="target mean (real)")
    p.add_argument("--var", type=float, required=True, help="target variance (real, >= 0)")
    _out(p)
    p.set_defaults(func=cmd_tp_fit)

    p = sub.add_parser("distance", help="d_TV and d_loc between two laws")
    p.add_argument("--pmf", required=True, metavar="PATH", help="Pmf JSON (offset, masses, tail_defect)")
    p.add_argument("--other", metavar="PATH", help="second Pmf JSON")
    p.add_argument("--mu", type=float, help="compare with TP fitted to this mean (real)")
    p.add_argument("--var", type=float, help="... and this variance (real)")
    _out(p)
    p.set_defaults(func=cmd_distance)

    p = sub.add_parser("simulate", help="Monte Carlo law of the statistic as Pmf JSON")
    _common(p)
    p.add_argument("--reps", type=_positive_int, required=True, help="replicates (count)")
    p.add_argument("--estimator", choices=["conditional", "empirical"], default="conditional",
                   help="conditional mixture of exact laws, or plug-in frequencies")
    _seed(p)
    _out(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("decompose", help="variance decomposition by two-stage simulation")
    _common(p)
    p.add_argument("--reps", type=_positive_int, required=True, help="replicates (count, >= 1000)")
    p.add_argument("--no-u", action="store_true", help="omit the U samples from the output")
    _seed(p)
    _out(p)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("rates", help="distance-to-TP rate table as CSV")
    p.add_argument("--model", required=True, metavar="PATH", help="model JSON")
    p.add_argument("--stat", required=True, metavar="kn|knr:R", help="statistic")
    p.add_argument("--grid", required=True, help="increasing ball counts, comma separated")
    p.add_argument("--method", choices=["exact", "mc"], default="mc",
                   help="exact dynamic program or Monte Carlo")
    p.add_argument("--samples", type=_positive_int, default=1_000_000,
                   help="Monte Carlo replicates per grid point (count, >= 100000)")
    p.add_argument("--estimator", choices=["conditional", "empirical"], default="conditional",
                   help="Monte Carlo estimator of the law")
    _seed(p, required=False)
    _out(p, "CSV")
    p.set_defaults(func=cmd_rates)

    p = sub.add_parser("lemmas", help="randomized checks of the auxiliary bounds")
    p.add_argument("--seed", type=_u64, required=True, help="RNG seed, unsigned 64-bit integer")
    p.add_argument("--count", type=_positive_int, default=10_000,
                   help="random instances per family (count)")
    _out(p)
    p.set_defaults(func=cmd_lemmas)
    return parser


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            warnings.showwarning = lambda msg, *a, **k: sys.stderr.write(f"warning: {msg}\n")
            status = args.func(args)
        return status or EXIT_OK
    except ValidationError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INVALID
    except ResourceError as exc:
        sys.stderr.write(f"resource limit: {exc}\n")
        return EXIT_RESOURCE


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
