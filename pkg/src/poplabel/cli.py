"""Command-line front door: ``poplabel <verb> [flags]``.

Exit codes: 0 success, 1 user error, 2 consistency failure.
"""
from __future__ import annotations

import argparse
import json
import signal
import sys
from pathlib import Path

from . import experiments as ex
from .calibration import PROCEDURES, write_fixture
from .engine import RunLimits, dump_trace, run
from .labeling import REGISTRY, build, schema
from .protocol import ProtocolError
from .verify import bounds_from_stats

OK, USER_ERROR, INCONSISTENT = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _echo(verb, args):
    flags = {k: v for k, v in sorted(vars(args).items()) if k not in ("verb", "func") and v is not None}
    print(f"# poplabel {verb} " + " ".join(f"{k}={v}" for k, v in flags.items()))


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


# ---------------------------------------------------------------- verbs


def cmd_run(args):
    params = dict(epsilon=args.epsilon, k=args.k, c_phase=args.c_phase, c_elect=args.c_elect,
                  leader_mode=args.leader, generalized=True if args.generalized else None)
    proto = build(args.protocol, args.n, **params)
    limits = RunLimits(max_interactions=args.max_interactions)
    _echo("run", args)
    rec = run(proto, limits, seed=args.seed, keep_trace=args.trace is not None)
    if args.trace:
        dump_trace(rec, proto, args.trace)
    for key, value in rec.summary().items():
        print(f"{key}: {value}")
    return OK


def cmd_sweep(args):
    spec = ex.ExperimentSpec.load(args.spec)
    spec.validate()
    _echo("sweep", args)
    out = args.out or spec.out or "."
    cells = ex.sweep(spec, jobs=args.jobs,
                     progress=(lambda d, t: print(f"  batch {d}/{t}", file=sys.stderr)) if args.progress else None)
    fits = []
    for model in args.fit or []:
        fits.append(ex.fit(cells, model))
    paths = ex.emit(cells, fits, out, stem=spec.name, spec=spec)
    for c in cells:
        r = c.row()
        print(f"{c.protocol} n={c.n} eps={c.epsilon} k={c.k} trials={c.trials} completed={c.completed} "
              f"mean={r['mean_interactions']} census_max={c.census_max} "
              f"validity_failures={c.validity_failures} safety_violations={c.safety_violations}"
              + (" TRUNCATED" if c.truncated else ""))
    for f in fits:
        print(f"fit {f.model}: a={f.coefficient!r} R2={f.r2!r}")
    for p in paths:
        print(f"wrote {p}")
    return OK


def _load_cells(path):
    path = Path(path)
    if not path.exists():
        raise UsageError(f"no such file: {path}")
    if path.suffix == ".json":
        return json.loads(path.read_text())["cells"]
    return ex.read_csv(path)


def _num(v, cast=float):
    return None if v in (None, "") else cast(v)


def cmd_verify(args):
    out = Path(args.out)
    report_path = out / f"{args.stem}.json"
    if not report_path.exists():
        raise UsageError(f"no sweep report at {report_path}")
    _echo("verify", args)
    cells = json.loads(report_path.read_text())["cells"]
    reports, failing = [], []
    for c in cells:
        params = {k: c.get(k) for k in ("epsilon", "k", "c_phase", "leader_mode")}
        if c.get("generalized"):
            params["generalized"] = True
        proto = build(c["protocol"], c["n"], **params)
        meta = proto.metadata()
        rep = bounds_from_stats(meta, c.get("census_min"), c.get("census_max"),
                                _num(c.get("mean_interactions")), _num(c.get("stderr")),
                                c["trials"], sigmas=args.sigmas).to_dict()
        problems = []  # only protocols that are valid and safe with certainty
        if meta["silent_safe"] and c.get("safety_violations"):
            problems.append("safety violations")
        if meta["silent_safe"] and c.get("validity_failures"):
            problems.append("invalid labelings")
        rep["problems"] = problems
        rep["consistent"] = rep["consistent"] and not problems
        reports.append(rep)
        verdicts = ", ".join(f"{k}={v}" for k, v in rep["verdicts"].items()) or "no applicable bounds"
        print(f"{rep['protocol']} n={rep['n']}: {verdicts}" + (f"; {', '.join(problems)}" if problems else ""))
        if not rep["consistent"]:
            failing.append(rep)
    (out / f"{args.stem}_verify.json").write_text(json.dumps(reports, indent=2, sort_keys=True))
    if failing:
        print("inconsistent:", file=sys.stderr)
        for rep in failing:
            print(json.dumps(rep, sort_keys=True), file=sys.stderr)
        return INCONSISTENT
    return OK


def cmd_fit(args):
    if args.model not in ex.MODELS:
        raise ProtocolError(f"unknown model {args.model!r}; known: {', '.join(ex.MODELS)}")
    cells = _load_cells(args.cells)
    _echo("fit", args)
    res = ex.fit(cells, args.model)
    print(f"model: {res.formula}")
    print(f"coefficient: {res.coefficient!r}")
    print(f"r2: {res.r2!r}")
    if res.loglog_slope is not None:
        print(f"loglog_slope: {res.loglog_slope!r}")
    for r in res.residuals:
        print(f"  n={r['n']} eps={r['epsilon']} measured={r['measured']!r} fitted={r['fitted']!r}")
    if args.out:
        ex.emit([], [res], args.out, stem=Path(args.cells).stem + "_fit")
    return OK


def cmd_calibrate(args):
    proc = PROCEDURES[args.primitive]
    _echo("calibrate", args)
    kw = {k: v for k, v in (("n", args.n), ("trials", args.trials), ("seed", args.seed)) if v is not None}
    rec = proc(**kw)
    path = args.out or f"calibration_{args.primitive}.json"
    extra = {k: v for k, v in rec.items() if k not in ("protocol", "n", "trials", "constant", "seed")}
    write_fixture(path, rec["protocol"], rec["n"], rec["trials"], rec["constant"], rec["seed"], **extra)
    print(f"{rec['name']} = {rec['constant']!r}")
    print(f"wrote {path}")
    return OK


def cmd_list(args):
    for name, e in REGISTRY.items():
        sch = ", ".join(f"{k}:{v}" for k, v in schema(name).items())
        print(f"{name:24s} {sch}")
        print(f"{'':24s} {e.summary}")
    return OK


# ---------------------------------------------------------------- parser


def make_parser():
    p = _Parser(prog="poplabel", description="Population-protocol labeling simulator.")
    sub = p.add_subparsers(dest="verb", parser_class=_Parser)

    r = sub.add_parser("run", help="run one simulation")
    r.add_argument("--protocol", required=True)
    r.add_argument("--n", type=int, required=True)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--epsilon", type=float)
    r.add_argument("--k", type=int)
    r.add_argument("--c-phase", type=float)
    r.add_argument("--c-elect", type=float)
    r.add_argument("--leader", choices=("oracle", "elected"), default="oracle")
    r.add_argument("--generalized", action="store_true", help="cycle protocols for non-square n")
    r.add_argument("--trace", metavar="PATH")
    r.add_argument("--max-interactions", type=_positive, default=10 ** 9)
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="execute an experiment spec")
    s.add_argument("--spec", required=True)
    s.add_argument("--out")
    s.add_argument("--jobs", type=_positive)
    s.add_argument("--fit", action="append", choices=sorted(ex.MODELS))
    s.add_argument("--progress", action="store_true")
    s.set_defaults(func=cmd_sweep)

    v = sub.add_parser("verify", help="check a sweep's outputs against the lower bounds")
    v.add_argument("--out", required=True)
    v.add_argument("--stem", default="sweep")
    v.add_argument("--sigmas", type=float, default=3.0)
    v.set_defaults(func=cmd_verify)

    f = sub.add_parser("fit", help="fit a growth model to cell means")
    f.add_argument("--cells", required=True)
    f.add_argument("--model", required=True)
    f.add_argument("--out")
    f.set_defaults(func=cmd_fit)

    c = sub.add_parser("calibrate", help="calibrate a primitive's constant")
    c.add_argument("--primitive", required=True, choices=sorted(PROCEDURES))
    c.add_argument("--n", type=_positive)
    c.add_argument("--trials", type=_positive)
    c.add_argument("--seed", type=int)
    c.add_argument("--out")
    c.set_defaults(func=cmd_calibrate)

    lp = sub.add_parser("list-protocols", help="print the protocol registry")
    lp.set_defaults(func=cmd_list)
    return p


def _sigterm(signum, frame):
    raise KeyboardInterrupt


def main(argv=None):
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            parser.print_help(sys.stderr)
            return USER_ERROR
        if args.verb == "run" and args.protocol not in REGISTRY:
            raise ProtocolError(f"unknown protocol {args.protocol!r}; known: {', '.join(REGISTRY)}")
        try:
            signal.signal(signal.SIGTERM, _sigterm)
        except ValueError:  # not in the main thread
            pass
        return args.func(args)
    except (UsageError, ProtocolError, ex.SpecError, ex.EmitError, FileNotFoundError,
            json.JSONDecodeError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return USER_ERROR


if __name__ == "__main__":
    sys.exit(main())
