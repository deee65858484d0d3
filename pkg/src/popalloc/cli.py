"""Command-line entry point: ``popalloc {gen,solve,simulate,compare,invariant}``.

Spec files are JSON objects with fields ``p, reward0, reward1, q0_logits,
q1_logits, pd0, pd1, p0, inflow, bases``:

* ``reward0``/``reward1`` and each row of ``bases``: ``[intercept, slope_1..slope_p]``
* ``q0_logits``/``q1_logits``: ``p`` rows, row ``i`` the logistic coefficients of
  ``P(x'_i = 1 | x)`` in the same intercept-first layout
* ``pd0``, ``pd1``, ``p0``: ``{"const": c}`` or ``{"logits": [...]}``
* ``inflow``: list of ``["0101", weight]`` pairs summing to 1

``--spec builtin:small`` and ``--spec builtin:delayed_benefit`` select the
shipped examples.

Exit codes: 0 success, 1 numerical or convergence failure, 2 usage or
validation error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
import time
from pathlib import Path

from . import __version__, _bits, builtin_spec_path
from .adp import default_candidates, mortality_threshold, row_generation
from .dynamics import find_invariant
from .errors import (
    CapacityExceeded,
    DimensionTooLarge,
    MasterInfeasible,
    MaxRoundsExceeded,
    NoConvergence,
    NumericalFailure,
    ParseError,
    PrimalInfeasible,
    ValidationError,
    ZeroVariance,
)
from .measures import AtomicMeasure
from .model import dumps_spec, gen_synthetic, load_spec
from .sim import SimConfig, compare_horizons, run_episode

log = logging.getLogger("popalloc")

EXIT_OK, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2
POLICY_LABELS = {"adp": "ADP", "myopic": "Myopic", "none": "None"}


class UsageError(Exception):
    pass


def _resolve_spec(arg: str) -> Path:
    if arg.startswith("builtin:"):
        try:
            return builtin_spec_path(arg.split(":", 1)[1])
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    return Path(arg)


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _nonneg_int(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative integer, got {text}")
    return v


def _ratio(text: str) -> float:
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"expected a value in [0, 1], got {text}")
    return v


def _horizons(text: str) -> list[int]:
    try:
        hs = [int(h) for h in text.split(",") if h.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad horizon list {text!r}") from exc
    if not hs or min(hs) < 1:
        raise argparse.ArgumentTypeError("horizons must be positive integers")
    return hs


def _emit(text: str, out: str | None) -> list[str]:
    if out is None:
        sys.stdout.write(text)
        return []
    Path(out).write_text(text)
    return [out]


def _write_manifest(args, outputs: list[str], started: float) -> None:
    if not outputs:
        return
    skip = {"func", "out", "threads", "quiet"}
    config = {k: v for k, v in sorted(vars(args).items()) if k not in skip}
    digest = hashlib.sha256(json.dumps(config, sort_keys=True, default=str).encode()).hexdigest()
    manifest = {
        "command": args.command,
        "spec": getattr(args, "spec", None),
        "config_hash": digest,
        "seed": getattr(args, "seed", None),
        "version": __version__,
        "wall_clock_seconds": round(time.time() - started, 3),
        "outputs": outputs,
    }
    Path(outputs[0] + ".manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# -- subcommands ----------------------------------------------------------------------
def cmd_gen(args) -> list[str]:
    spec = gen_synthetic(args.seed, args.p, args.k, mortality_odds_ratio=args.odds_ratio)
    return _emit(dumps_spec(spec), args.out)


def cmd_solve(args) -> list[str]:
    spec = load_spec(_resolve_spec(args.spec))
    cand = default_candidates(spec)
    dstar = mortality_threshold(spec, cand, args.capacity_ratio, args.tol, args.max_rounds)
    log.info("mortality threshold %.10g over %d candidates", dstar, len(cand))
    bw = row_generation(spec, cand, dstar, args.capacity_ratio, args.tol, args.max_rounds)
    doc = bw.to_json()
    doc["candidates"] = len(cand)
    doc["capacity_ratio"] = args.capacity_ratio
    return _emit(json.dumps(doc, indent=2, sort_keys=True) + "\n", args.out)


def _sim_config(args, T: int) -> SimConfig:
    return SimConfig(
        n=args.n,
        m=args.m,
        T=T,
        replications=args.replications,
        base_seed=args.seed,
        resolve_every=args.resolve_every,
        cohort_mix=args.cohort_mix,
        realization=args.realization,
        tol=args.tol,
    )


def cmd_simulate(args) -> list[str]:
    spec = load_spec(_resolve_spec(args.spec))
    cfg = _sim_config(args, args.horizon)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["replication", "seed", "home_days_per_patient_period", "deaths", "treated_patient_periods"])
    traj = []
    for r in range(1, cfg.replications + 1):
        seed = cfg.base_seed + r
        res = run_episode(spec, cfg, args.policy, seed)
        w.writerow([r, seed, f"{res.home_days_per_patient_period:.6f}", res.deaths, res.treated_patient_periods])
        traj.append(res.per_period_totals)
        if not args.quiet:
            log.info("replication %d/%d: %.6f", r, cfg.replications, res.home_days_per_patient_period)
    outputs = _emit(buf.getvalue(), args.out)
    if args.trajectory:
        tb = io.StringIO()
        tw = csv.writer(tb, lineterminator="\n")
        tw.writerow(["replication", "period", "initial_cohort_home_days"])
        for r, totals in enumerate(traj, 1):
            for t, v in enumerate(totals):
                tw.writerow([r, t, f"{v:.6f}"])
        Path(args.trajectory).write_text(tb.getvalue())
        outputs.append(args.trajectory)
    return outputs


def cmd_compare(args) -> list[str]:
    if args.replications < 2:
        raise UsageError("compare needs --replications >= 2 for the paired t-test")
    spec = load_spec(_resolve_spec(args.spec))
    cfg = _sim_config(args, max(args.horizons))
    rows = compare_horizons(spec, cfg, args.horizons, args.policy_a, args.policy_b, threads=args.threads)
    la = POLICY_LABELS[args.policy_a]
    lb = POLICY_LABELS[args.policy_b]
    if lb == la:
        lb += "_b"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["T", la, lb, "Difference", "annual_gain_per_1000", "t", "p"])
    for row in rows:
        r = row.result
        w.writerow(
            [
                row.T,
                f"{r.mean_a:.6f}",
                f"{r.mean_b:.6f}",
                f"{r.mean_diff:.6f}",
                f"{r.annual_gain_per_1000:.6f}",
                f"{r.t_statistic:.6f}",
                f"{r.p_value:.6e}",
            ]
        )
    return _emit(buf.getvalue(), args.out)


def cmd_invariant(args) -> list[str]:
    spec = load_spec(_resolve_spec(args.spec))
    if args.init == "inflow":
        mu0 = spec.inflow
    elif args.init == "uniform":
        keys = _bits.all_bitstrings(spec.p)
        mu0 = AtomicMeasure((k, 1.0 / len(keys)) for k in keys)
    else:
        mu0 = AtomicMeasure.from_table(Path(args.init).read_text()).normalized()
    history: list[float] = []
    mu, iters = find_invariant(spec, mu0, args.tol, args.max_iter, history=history)
    text = f"# iterations {iters}\n# final_tv {history[-1]:.6e}\n" + mu.to_table()
    return _emit(text, args.out)


# -- parser -----------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="popalloc", description=__doc__.split("\n")[0])
    parser.add_argument("--quiet", action="store_true", help="suppress progress logs on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a synthetic spec")
    g.add_argument("--seed", type=_nonneg_int, required=True)
    g.add_argument("--p", type=_positive_int, required=True)
    g.add_argument("--k", type=_positive_int, default=3)
    g.add_argument("--odds-ratio", type=float, default=0.7, help="treated/untreated mortality odds ratio")
    g.add_argument("--out")
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("solve", help="mortality threshold and bias weights")
    s.add_argument("--spec", required=True)
    s.add_argument("--capacity-ratio", type=_ratio, default=0.1)
    s.add_argument("--tol", type=float, default=1e-7)
    s.add_argument("--max-rounds", type=_positive_int, default=500)
    s.add_argument("--out")
    s.set_defaults(func=cmd_solve)

    def sim_flags(p):
        p.add_argument("--spec", required=True)
        p.add_argument("--seed", type=_nonneg_int, required=True)
        p.add_argument("--n", type=_positive_int, default=1000)
        p.add_argument("--m", type=_nonneg_int, default=100)
        p.add_argument("--replications", type=_positive_int, default=500)
        p.add_argument("--resolve-every", type=_positive_int, default=1)
        p.add_argument("--cohort-mix", type=_ratio, default=0.5)
        p.add_argument("--realization", choices=["systematic", "bernoulli", "top"], default="systematic")
        p.add_argument("--tol", type=float, default=1e-7)
        p.add_argument("--out")

    m = sub.add_parser("simulate", help="run one policy over replications")
    sim_flags(m)
    m.add_argument("--horizon", type=_positive_int, default=10)
    m.add_argument("--policy", choices=["adp", "myopic", "none"], default="adp")
    m.add_argument("--trajectory", help="per-period initial-cohort totals CSV")
    m.set_defaults(func=cmd_simulate)

    c = sub.add_parser("compare", help="paired comparison across horizons")
    sim_flags(c)
    c.add_argument("--horizons", type=_horizons, default=[10, 30, 50])
    c.add_argument("--policy-a", choices=["adp", "myopic", "none"], default="adp")
    c.add_argument("--policy-b", choices=["adp", "myopic", "none"], default="myopic")
    c.add_argument("--threads", type=_positive_int, default=1)
    c.set_defaults(func=cmd_compare)

    i = sub.add_parser("invariant", help="invariant distribution of the untreated chain")
    i.add_argument("--spec", required=True)
    i.add_argument("--init", default="inflow", help="inflow, uniform, or a measure table file")
    i.add_argument("--tol", type=float, default=1e-10)
    i.add_argument("--max-iter", type=_positive_int, default=100_000)
    i.add_argument("--out")
    i.set_defaults(func=cmd_invariant)
    for p in (g, s, m, c, i):
        p.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS, help="suppress progress logs")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s", stream=sys.stderr)
    started = time.time()
    try:
        outputs = args.func(args)
    except (UsageError, ParseError, ValidationError, DimensionTooLarge, CapacityExceeded, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MaxRoundsExceeded as exc:
        print(f"error: {exc}; best violation {exc.max_violation:.3g}", file=sys.stderr)
        return EXIT_NUMERIC
    except (NumericalFailure, NoConvergence, MasterInfeasible, PrimalInfeasible, ZeroVariance) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    _write_manifest(args, outputs, started)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
