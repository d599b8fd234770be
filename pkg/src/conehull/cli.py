"""Command-line front end.

Exit codes: 0 success, 1 data error, 2 under-determined anchor set,
64 usage error.  Indices in every input and output file are 0-based.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings

import numpy as np

from . import bench
from .engine import calibrate_c_hat, cone_membership, dca, default_s
from .exceptions import ConeHullError, MatrixFormatError, UnderdeterminedError
from .geometry import ConicalHullProblem, Ensemble, ProjectionPlan
from .matrixio import atomic_write, format_config, read_matrix, write_matrix
from .postprocess import (
    cluster_anchors_sc,
    fit_hmm,
    fit_lda,
    fit_nmf,
    gmm_cluster,
)
from .reductions import (
    MultiViewData,
    cooccurrence,
    reduce_gmm,
    reduce_hmm,
    reduce_nmf,
    reduce_sc,
)

EXIT_OK, EXIT_DATA, EXIT_UNDER, EXIT_USAGE = 0, 1, 2, 64
MODELS = ("nmf", "gmm", "hmm", "lda", "sc")

log = logging.getLogger("conehull")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _seed(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return v


def _fraction(text):
    v = float(text)
    if not 0 < v <= 1:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1], got {v}")
    return v


def _positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {v}")
    return v


def _c_hat(text):
    return "auto" if text == "auto" else _positive_float(text)


def _dims(text):
    try:
        parts = tuple(int(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected p1,p2,p3") from None
    if len(parts) != 3 or min(parts) < 1:
        raise argparse.ArgumentTypeError("expected three positive widths p1,p2,p3")
    return parts


def _add_plan_flags(p, with_k=True):
    p.add_argument("--s", type=_positive_int, help="number of sub-problems")
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--ensemble", choices=[e.value for e in Ensemble],
                   default=Ensemble.GAUSSIAN.value)
    p.add_argument("--d", type=_positive_int, default=2,
                   help="projected dimension (values above 2 use exhaustive search)")
    p.add_argument("--threads", type=_positive_int,
                   help="worker threads (capped by CONEHULL_THREADS)")


def build_parser():
    parser = _Parser(prog="conehull", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    a = sub.add_parser("anchor", help="find k anchor rows of Y covering X")
    a.add_argument("--x", required=True)
    a.add_argument("--y", help="generator matrix; omitted means Y is X")
    a.add_argument("--k", required=True, type=_positive_int)
    a.add_argument("--c-hat", type=_c_hat, default=1.0,
                   help="geometry constant for the default s, or 'auto'")
    a.add_argument("--delta", type=_fraction, default=0.05)
    a.add_argument("--out", default=".", help="output directory")
    _add_plan_flags(a)

    r = sub.add_parser("reduce", help="build X and Y for a model")
    r.add_argument("--model", required=True, choices=MODELS)
    r.add_argument("--input", required=True, nargs="+")
    r.add_argument("--out-x", required=True)
    r.add_argument("--out-y", required=True)
    r.add_argument("--k", type=_positive_int)
    r.add_argument("--q", type=_positive_int)
    r.add_argument("--omega-fraction", type=_fraction)
    r.add_argument("--views", type=_dims, help="contiguous view widths p1,p2,p3")
    r.add_argument("--eta", choices=("orthant", "sphere"))
    r.add_argument("--seed", type=_seed, default=0)
    r.add_argument("--format", choices=("text", "binary"), default="text")

    f = sub.add_parser("fit", help="model parameters from anchors")
    f.add_argument("--model", required=True, choices=MODELS)
    f.add_argument("--input", required=True, nargs="+",
                   help="data: X (nmf, sc), counts or Q (lda), views (gmm), "
                        "sequences (hmm)")
    f.add_argument("--anchors", help="anchor index file (not used by sc)")
    f.add_argument("--q-input", action="store_true",
                   help="lda: the input already is the co-occurrence matrix")
    f.add_argument("--alpha0", type=_positive_float, default=1.0)
    f.add_argument("--views", type=_dims)
    f.add_argument("--k", type=_positive_int, help="sc: total anchor count")
    f.add_argument("--clusters", type=_positive_int, help="sc: number of cones")
    f.add_argument("--out", default=".")
    _add_plan_flags(f)

    m = sub.add_parser("member", help="projected cone membership test")
    m.add_argument("--x", required=True)
    m.add_argument("--y", required=True)
    m.add_argument("--out", help="write verdicts here instead of stdout")
    _add_plan_flags(m)
    m.set_defaults(s=None)

    b = sub.add_parser("bench", help="synthetic benchmark sweep")
    b.add_argument("--suite", required=True, choices=MODELS)
    b.add_argument("--grid", action="append", default=[],
                   metavar="FIELD=V1,V2", help="sweep a spec field (repeatable)")
    b.add_argument("--set", action="append", default=[], metavar="FIELD=V",
                   help="override a base spec field (repeatable)")
    b.add_argument("--methods", default="dca")
    b.add_argument("--s-values", default="", help="comma list; default from k")
    b.add_argument("--seeds", type=_positive_int, default=10)
    b.add_argument("--seed", type=_seed, default=0)
    b.add_argument("--threads", type=_positive_int)
    b.add_argument("--timing", action="store_true",
                   help="add a wall_time column (output then varies between runs)")
    b.add_argument("--out", required=True)
    return parser


# -- helpers --------------------------------------------------------------

def _ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path


def _write_config(out_dir, cfg):
    atomic_write(os.path.join(out_dir, "config.txt"), format_config(cfg))


def _write_json(path, obj):
    atomic_write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _read_indices(path):
    with open(path) as fh:
        out = []
        for i, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(int(line))
            except ValueError:
                raise MatrixFormatError(f"not an index: {line.strip()!r}", i) from None
    return out


def _plan(args, s):
    return ProjectionPlan(s=s, d=args.d, ensemble=args.ensemble, seed=args.seed)


def _views(M, widths, seed):
    if widths is None:
        return MultiViewData.from_features(M, seed)
    if sum(widths) != M.shape[1]:
        raise UsageError(f"--views widths sum to {sum(widths)}, data has "
                         f"{M.shape[1]} columns")
    cuts = np.cumsum(widths)[:-1]
    groups = tuple(np.arange(a, b) for a, b in
                   zip(np.r_[0, cuts], np.r_[cuts, M.shape[1]]))
    return MultiViewData(tuple(M[:, g] for g in groups), groups)


_MODEL_FLAGS = {
    "nmf": set(),
    "sc": {"k"},
    "lda": set(),
    "gmm": {"k", "q", "omega_fraction", "views", "eta"},
    "hmm": {"k", "q", "omega_fraction", "eta"},
}


# -- commands -------------------------------------------------------------

def cmd_anchor(args):
    X = read_matrix(args.x)
    Y = X if args.y is None else read_matrix(args.y)
    self_ref = args.y is None
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        prob = ConicalHullProblem(X, Y, args.k, self_referential=self_ref)
    c_hat = args.c_hat
    s = args.s
    if s is None:
        if c_hat == "auto":
            c_hat = calibrate_c_hat(prob, _plan(args, 1), args.threads)
        s = default_s(args.k, c_hat, args.delta)
    plan = _plan(args, s)
    out = _ensure_dir(args.out)
    cfg = {"command": "anchor", "k": args.k, "s": s, "d": args.d,
           "ensemble": args.ensemble, "seed": args.seed, "c_hat": c_hat,
           "delta": args.delta, "self_referential": self_ref,
           "x": args.x, "y": args.y or ""}
    code = EXIT_OK
    try:
        res = dca(prob, plan, args.threads)
        anchors, tally, notes = res.anchor_set, res.tally, res.anchor_set.warnings
    except UnderdeterminedError as exc:
        anchors, tally, notes = exc.anchor_set, exc.tally, (str(exc),)
        print(f"conehull: under-determined: {exc}", file=sys.stderr)
        code = EXIT_UNDER
    atomic_write(os.path.join(out, "anchors.txt"),
                 "".join(f"{i}\n" for i in anchors.indices))
    atomic_write(os.path.join(out, "tally.csv"),
                 "index,score\n" + "".join(f"{i},{g!r}\n"
                                           for i, g in enumerate(tally.g_hat.tolist())))
    cfg["s_effective"] = tally.s_effective
    cfg["warnings"] = " | ".join(list(notes) + [str(w.message) for w in caught])
    _write_config(out, cfg)
    for n in notes:
        print(f"conehull: warning: {n}", file=sys.stderr)
    return code


def cmd_reduce(args):
    given = {f for f in ("k", "q", "omega_fraction", "views", "eta")
             if getattr(args, f) is not None}
    extra = given - _MODEL_FLAGS[args.model]
    if extra:
        flags = ", ".join("--" + e.replace("_", "-") for e in sorted(extra))
        raise UsageError(f"{flags} not valid with --model {args.model}")
    meta = {"model": args.model, "seed": args.seed, "inputs": args.input}
    if args.model != "hmm" and len(args.input) != 1:
        raise UsageError(f"--model {args.model} takes exactly one input file")
    mats = [read_matrix(p) for p in args.input]
    if args.model == "nmf":
        X = reduce_nmf(mats[0], 1).X
        Y = X
    elif args.model == "sc":
        X = reduce_sc(mats[0], args.k or 1).X
        Y = X
    elif args.model == "lda":
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            co = cooccurrence(mats[0])
        X = Y = co.Q
        meta["dropped_documents"] = list(co.dropped)
        meta["warnings"] = [str(w.message) for w in caught]
    else:
        eta = args.eta or "orthant"
        if args.model == "gmm":
            data = _views(mats[0], args.views, args.seed)
            red = reduce_gmm(data, k=args.k, q=args.q, seed=args.seed,
                             omega_fraction=args.omega_fraction, eta=eta)
        else:
            red = reduce_hmm(mats, k=args.k or 1, q=args.q, seed=args.seed,
                             omega_fraction=args.omega_fraction, eta=eta)
        X, Y = red.X, red.Y
        meta.update(q=red.q, eta=eta, etas=red.etas.tolist(),
                    omega=None if red.omega is None else red.omega.tolist(),
                    pair=list(red.pair), third=red.third,
                    view_dims=list(red.data.dims),
                    feature_groups=None if red.data.feature_groups is None
                    else [g.tolist() for g in red.data.feature_groups])
    write_matrix(args.out_x, X, args.format)
    write_matrix(args.out_y, Y, args.format)
    meta["x_shape"], meta["y_shape"] = list(X.shape), list(Y.shape)
    _write_json(args.out_x + ".meta.json", meta)
    cfg = {"command": "reduce", "model": args.model, "seed": args.seed,
           "q": args.q, "k": args.k, "omega_fraction": args.omega_fraction,
           "eta": args.eta, "format": args.format}
    _write_config(os.path.dirname(os.path.abspath(args.out_x)), cfg)
    return EXIT_OK


def cmd_fit(args):
    out = _ensure_dir(args.out)
    summary = {"model": args.model}
    cfg = {"command": "fit", "model": args.model, "seed": args.seed,
           "alpha0": args.alpha0}
    if args.model != "sc" and args.anchors is None:
        raise UsageError(f"--anchors is required for --model {args.model}")
    if args.model != "hmm" and len(args.input) != 1:
        raise UsageError(f"--model {args.model} takes exactly one input file")
    mats = [read_matrix(p) for p in args.input]
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        if args.model == "nmf":
            A = _read_indices(args.anchors)
            res = fit_nmf(reduce_nmf(mats[0], len(A)).X, A)
            write_matrix(os.path.join(out, "F.txt"), res.F)
            summary["relative_residual"] = res.residual
        elif args.model == "lda":
            A = _read_indices(args.anchors)
            Q = mats[0] if args.q_input else cooccurrence(mats[0]).Q
            res = fit_lda(Q, A, args.alpha0)
            write_matrix(os.path.join(out, "O.txt"), res.O)
            write_matrix(os.path.join(out, "F.txt"), res.F)
            write_matrix(os.path.join(out, "R.txt"), res.R)
            write_matrix(os.path.join(out, "alpha.txt"), res.alpha.reshape(1, -1))
            summary["alpha"] = res.alpha.tolist()
            summary["alpha_note"] = f"alpha determined up to alpha0={args.alpha0}"
        elif args.model == "hmm":
            A = _read_indices(args.anchors)
            red = reduce_hmm(mats, k=len(A), q=2)
            res = fit_hmm(red, A)
            write_matrix(os.path.join(out, "O.txt"), res.O)
            write_matrix(os.path.join(out, "T.txt"), res.T)
        elif args.model == "gmm":
            A = _read_indices(args.anchors)
            data = _views(mats[0], args.views, args.seed)
            red = reduce_gmm(data, k=len(A), q=2, seed=args.seed)
            centers, labels = gmm_cluster(red, A)
            for i, c in enumerate(centers, 1):
                write_matrix(os.path.join(out, f"centers_view{i}.txt"), c)
            atomic_write(os.path.join(out, "labels.txt"),
                         "".join(f"{v}\n" for v in labels.tolist()))
        else:
            if args.k is None:
                raise UsageError("--k (total anchor count) is required for sc")
            s = args.s or 8 * args.k
            cfg["s"] = s
            res = cluster_anchors_sc(mats[0], _plan(args, s), args.k,
                                     n_clusters=args.clusters,
                                     n_threads=args.threads)
            atomic_write(os.path.join(out, "labels.txt"),
                         "".join(f"{v}\n" for v in res.labels.tolist()))
            atomic_write(os.path.join(out, "anchors.txt"),
                         "".join(f"{i}\n" for i in res.anchors.indices))
            summary["anchor_groups"] = [list(g) for g in res.anchor_groups]
            write_matrix(os.path.join(out, "G.txt"), res.G)
    summary["warnings"] = [str(w.message) for w in caught]
    _write_json(os.path.join(out, "summary.json"), summary)
    _write_config(out, cfg)
    return EXIT_OK


def cmd_member(args):
    X = read_matrix(args.x)
    Y = read_matrix(args.y)
    lines = []
    if X.shape[0] > 0:
        s = args.s or default_s(max(Y.shape[0], 1), 1.0, 0.05)
        res = cone_membership(X, Y, _plan(args, s), args.threads)
        lines = [f"{i} {'covered' if c else 'outside'} {int(e)}\n"
                 for i, (c, e) in enumerate(zip(res.covered, res.violations))]
    text = "".join(lines)
    if args.out:
        atomic_write(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


_BENCH_BASE = {
    "nmf": dict(kind="nmf", n=300, p=500, k=10),
    "gmm": dict(kind="gmm", n=2000, k=5, dims=(20, 12, 16)),
    "sc": dict(kind="sc", n=500, p=300, k=4),
    "hmm": dict(kind="hmm", n=5000, p=10, k=2),
    "lda": dict(kind="lda", n=2000, p=50, k=3),
}

_SPEC_TYPES = {"n": int, "p": int, "k": int, "noise": float, "variance": float,
               "span_angle": float, "rays_per_cone": int, "doc_length": int,
               "anchor_mass": float}


def _spec_value(field, text):
    if field == "dims":
        return _dims(text)
    if field not in _SPEC_TYPES:
        raise UsageError(f"unknown spec field {field!r}")
    try:
        return _SPEC_TYPES[field](text)
    except ValueError:
        raise UsageError(f"bad value {text!r} for {field}") from None


def cmd_bench(args):
    base = dict(_BENCH_BASE[args.suite], seed=args.seed)
    for item in args.set:
        key, _, val = item.partition("=")
        if not _:
            raise UsageError(f"--set expects FIELD=V, got {item!r}")
        base[key] = _spec_value(key, val)
    specs = [bench.SyntheticSpec(**base)]
    for item in args.grid:
        key, _, vals = item.partition("=")
        if not _ or not vals:
            raise UsageError(f"--grid expects FIELD=V1,V2, got {item!r}")
        values = [_spec_value(key, v) for v in vals.split(",")] if key != "dims" \
            else [_dims(vals)]
        specs = [bench.SyntheticSpec(**{**sp.__dict__, key: v})
                 for sp in specs for v in values]
    methods = [m for m in args.methods.split(",") if m]
    bad = set(methods) - set(bench.METHODS)
    if bad:
        raise UsageError(f"unknown method(s): {', '.join(sorted(bad))}")
    try:
        s_values = [int(v) for v in args.s_values.split(",") if v] or [None]
    except ValueError:
        raise UsageError("--s-values must be integers") from None
    if any(v is not None and v < 1 for v in s_values):
        raise UsageError("--s-values must be positive")
    rows = bench.run_sweep(specs, methods, s_values, args.seeds, args.threads)
    out = _ensure_dir(args.out)
    atomic_write(os.path.join(out, "sweep.csv"), bench.sweep_csv(rows, args.timing))
    cfg = {"command": "bench", "suite": args.suite, "seeds": args.seeds,
           "seed": args.seed, "methods": methods, "grid": args.grid,
           "set": args.set, "s_values": args.s_values,
           "noise_definition": ("additive gaussian, sigma = noise * mean(|X|)"
                                if args.suite == "nmf"
                                else "additive gaussian, sigma = noise")}
    _write_config(out, cfg)
    return EXIT_OK


_COMMANDS = {"anchor": cmd_anchor, "reduce": cmd_reduce, "fit": cmd_fit,
             "member": cmd_member, "bench": cmd_bench}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="conehull: %(levelname)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"conehull {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except UnderdeterminedError as exc:
        print(f"conehull: under-determined: {exc}", file=sys.stderr)
        return EXIT_UNDER
    except (ConeHullError, ValueError, OSError) as exc:
        print(f"conehull: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
