"""``bridgegraph`` command line: groundtruth, build, search, ivf-build, ivf-search."""

from __future__ import annotations

import argparse
import sys

from . import bench


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--base", required=True, help="reference vectors (.fvecs/.bvecs)")
    p.add_argument("--format", choices=("fvecs", "bvecs"), help="override the suffix-based format")
    p.add_argument("--out", help="output path (CSV goes to stdout when omitted)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bridgegraph", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("groundtruth", help="exact top-k ids per query as ivecs")
    _common(p)
    p.add_argument("--queries", required=True)
    p.add_argument("--k", default="100", help="neighbours per query")

    p = sub.add_parser("build", help="build an augmented graph index")
    _common(p)
    p.add_argument("--partitions", type=int, default=4, help="subspaces m")
    p.add_argument("--clusters", type=int, default=50, help="codewords per subspace n")
    p.add_argument("--degree", type=int, default=20, help="neighbours per reference R")
    p.add_argument("--bridge-t", type=int, default=100, help="bridges kept per reference")
    p.add_argument("--bridge-b", type=int, default=5, help="references kept per bridge")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("search", help="accuracy/time sweep over k and T")
    _common(p)
    p.add_argument("--index", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--truth", help="ivecs ground truth (computed when omitted)")
    p.add_argument("--k", default="1,10,100")
    p.add_argument("--visits", default="100,500,1000", help="comma list of T values")
    p.add_argument("--engine", default="augmented",
                   help="comma list of augmented, plain, exact, ivfadc")
    p.add_argument("--probes", type=int, default=64, help="lists visited (ivfadc only)")
    p.add_argument("--seed", type=int, default=0, help="seeds the plain engine's start points")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--no-timing", action="store_true", help="write 0.0 in mean_us")

    p = sub.add_parser("ivf-build", help="build an inverted file with graph-searched centers")
    _common(p)
    p.add_argument("--lists", type=int, default=1024, help="coarse centers K")
    p.add_argument("--partitions", type=int, default=8, help="residual subspaces")
    p.add_argument("--clusters", type=int, default=256, help="residual codewords per subspace")
    p.add_argument("--assign-budget", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("ivf-search", help="recall sweep over short-list lengths")
    _common(p)
    p.add_argument("--index", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--truth")
    p.add_argument("--k", default="1,10,100", help="recall cutoffs")
    p.add_argument("--visits", default="1000,3000,10000", help="comma list of short-list lengths")
    p.add_argument("--probes", type=int, default=64)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--no-timing", action="store_true")
    return ap


def run(args: argparse.Namespace) -> None:
    c = args.command
    if c == "groundtruth":
        if not args.out:
            raise ValueError("--out is required for groundtruth")
        ks = bench.parse_int_list(args.k)
        if len(ks) != 1:
            raise ValueError("groundtruth takes a single --k")
        bench.cmd_groundtruth(args.base, args.queries, ks[0], args.out, args.format)
    elif c == "build":
        if not args.out:
            raise ValueError("--out is required for build")
        bench.cmd_build(args.base, args.out, m=args.partitions, n=args.clusters, R=args.degree,
                        t=args.bridge_t, b=args.bridge_b, seed=args.seed, threads=args.threads,
                        format=args.format)
    elif c == "search":
        engines = [e.strip() for e in args.engine.split(",") if e.strip()]
        if "ivfadc" in engines:
            if len(engines) > 1:
                raise ValueError("engine ivfadc reads an ANNV index and cannot be mixed with others")
            bench.cmd_ivf_search(args.index, args.base, args.queries, args.truth, args.k, args.visits,
                                 probes=args.probes, threads=args.threads, out=args.out,
                                 format=args.format, timing=not args.no_timing)
        else:
            bench.cmd_search(args.index, args.base, args.queries, args.truth, args.k, args.visits,
                             engines, seed=args.seed, threads=args.threads, out=args.out,
                             format=args.format, timing=not args.no_timing)
    elif c == "ivf-build":
        if not args.out:
            raise ValueError("--out is required for ivf-build")
        bench.cmd_ivf_build(args.base, args.out, K=args.lists, m=args.partitions, n=args.clusters,
                            seed=args.seed, assign_budget=args.assign_budget, format=args.format)
    elif c == "ivf-search":
        bench.cmd_ivf_search(args.index, args.base, args.queries, args.truth, args.k, args.visits,
                             probes=args.probes, threads=args.threads, out=args.out,
                             format=args.format, timing=not args.no_timing)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        run(args)
    except (OSError, ValueError, KeyError) as e:
        msg = str(e).splitlines()[0] if str(e) else type(e).__name__
        print(f"bridgegraph {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0
