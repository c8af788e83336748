"""Benchmark harness behind the command-line interface.

Every ``cmd_*`` function is usable from Python as well; the CLI in
:mod:`bridgegraph.cli` only parses flags and reports errors.

Search sweeps emit one CSV row per (engine, k, T) with the header
``engine,k,T,accuracy,mean_us,dist_evals,heap_ops``. For a given T the
discovered set does not depend on k, so each (query, T) is searched once
with the largest requested k and the top-k prefix scored for every k; the
timing and counter columns therefore repeat across k for the same T.
Timing wraps the search call only; for the augmented engine that includes
building the query's distance tables.
"""

from __future__ import annotations

import csv
import io
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import graph, ivfadc
from .search import SearchParams, accuracy, search_augmented, search_exact, search_plain
from .vecstore import Dataset, DistanceCounter, brute_force_knn_batch, load_dataset, read_ivecs, write_ivecs

CSV_HEADER = ("engine", "k", "T", "accuracy", "mean_us", "dist_evals", "heap_ops")
ENGINES = ("augmented", "plain", "exact")
PLAIN_SEEDS = 3


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    seed: int = 0

    def add(self, engine, k, T, acc, us, evals, heap_ops) -> None:
        self.rows.append(dict(engine=engine, k=k, T=T, accuracy=acc, mean_us=us,
                              dist_evals=evals, heap_ops=heap_ops))

    def to_csv(self, timing: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            w.writerow([
                r["engine"], r["k"], r["T"], f"{r['accuracy']:.6f}",
                f"{r['mean_us']:.1f}" if timing else "0.0",
                f"{r['dist_evals']:.2f}", f"{r['heap_ops']:.2f}",
            ])
        return buf.getvalue()

    def lookup(self, engine: str, k: int, T: int) -> dict:
        for r in self.rows:
            if (r["engine"], r["k"], r["T"]) == (engine, k, T):
                return r
        raise KeyError((engine, k, T))


def parse_int_list(text) -> list[int]:
    if isinstance(text, (list, tuple)):
        return [int(x) for x in text]
    return [int(x) for x in str(text).split(",") if x.strip()]


def map_in_order(fn: Callable, items: Sequence, threads: int = 1) -> list:
    """Apply ``fn`` to every item; output order matches input order."""
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _timed(fn):
    counter = DistanceCounter()
    t0 = time.perf_counter()
    res = fn(counter)
    us = (time.perf_counter() - t0) * 1e6
    return [i for i, _ in res], us, counter


def sweep(
    engine: str,
    run: Callable,
    queries: np.ndarray,
    truth: np.ndarray,
    ks: Sequence[int],
    Ts: Sequence[int],
    report: EvalReport,
    threads: int = 1,
) -> None:
    """``run(query_index, q, k, T, counter)`` returns ascending (id, dist)."""
    kmax = max(ks)
    for T in Ts:
        def one(j, T=T):
            return _timed(lambda c: run(j, queries[j], kmax, T, c))

        out = map_in_order(one, range(len(queries)), threads)
        us = float(np.mean([o[1] for o in out]))
        evals = float(np.mean([o[2].full_dist_evals for o in out]))
        hops = float(np.mean([o[2].heap_ops for o in out]))
        for k in ks:
            acc = float(np.mean([accuracy(o[0], truth[j], k) for j, o in enumerate(out)]))
            report.add(engine, k, T, acc, us, evals, hops)


def _write(text: str, out) -> None:
    if out is None or out == "-":
        print(text, end="")
    else:
        with open(out, "w") as f:
            f.write(text)


# --------------------------------------------------------------------------
# commands


def cmd_groundtruth(base, queries, k: int = 100, out=None, format: Optional[str] = None) -> np.ndarray:
    X = load_dataset(base, format)
    Q = load_dataset(queries, format)
    if k > X.count:
        raise ValueError(f"k={k} exceeds the base size {X.count}")
    ids = brute_force_knn_batch(X, Q.data, k)
    if out is not None:
        write_ivecs(out, ids)
    return ids


def cmd_build(base, out, m: int = 4, n: int = 50, R: int = 20, t: int = 100, b: int = 5,
              seed: int = 0, threads: int = 1, format: Optional[str] = None, log=print):
    X = load_dataset(base, format)
    g = graph.build_index(X, m=m, n=n, R=R, t=t, b=b, seed=seed, threads=threads)
    graph.save_index(g, out)
    if log is not None:
        st = g.stats
        log(f"size={g.count} partitions={m} clusters={n} references={st.num_reference} "
            f"stored_bridges={st.num_bridges_stored} alpha_mean_list={st.alpha:.4f} "
            f"alpha_over_b={st.alpha_over_b(b):.4f} alpha_over_all_bridges={st.alpha_over_all:.6f}")
    return g


def _load_truth(truth, Q: Dataset, X: Dataset, kmax: int) -> np.ndarray:
    if truth is None:
        return brute_force_knn_batch(X, Q.data, kmax)
    ids = read_ivecs(truth) if isinstance(truth, (str, bytes)) or hasattr(truth, "__fspath__") else np.asarray(truth)
    if len(ids) != Q.count:
        raise ValueError(f"truth has {len(ids)} rows for {Q.count} queries")
    if ids.shape[1] < kmax:
        raise ValueError(f"truth has {ids.shape[1]} ids per query, need {kmax}")
    return ids


def cmd_search(index, base, queries, truth=None, ks=(1, 10, 100), Ts=(100, 500, 1000),
               engines=("augmented",), seed: int = 0, threads: int = 1, out=None,
               format: Optional[str] = None, timing: bool = True) -> EvalReport:
    ks, Ts = parse_int_list(ks), parse_int_list(Ts)
    engines = [engines] if isinstance(engines, str) else list(engines)
    for e in engines:
        if e not in ENGINES:
            raise ValueError(f"unknown engine {e!r}; expected one of {ENGINES}")
    X = load_dataset(base, format)
    Q = load_dataset(queries, format)
    g = graph.load_index(index, X)
    gt = _load_truth(truth, Q, X, max(ks))
    rng = np.random.default_rng(seed)
    seeds = rng.integers(0, X.count, size=(Q.count, PLAIN_SEEDS))
    report = EvalReport(config=dict(index=str(index), engines=engines, ks=ks, Ts=Ts,
                                    plain_seeds=PLAIN_SEEDS, **g.params), seed=seed)
    runners = {
        "augmented": lambda j, q, k, T, c: search_augmented(g, q, SearchParams(k, T), counter=c),
        "plain": lambda j, q, k, T, c: search_plain(g.ngraph, X, q, seeds[j], SearchParams(k, T), counter=c),
        "exact": lambda j, q, k, T, c: search_exact(X, q, SearchParams(k, T), counter=c),
    }
    for e in engines:
        sweep(e, runners[e], Q.data, gt, ks, Ts, report, threads)
    _write(report.to_csv(timing), out)
    return report


def cmd_ivf_build(base, out, K: int = 1024, m: int = 8, n: int = 256, seed: int = 0,
                  assign_budget: int = 64, coarse_params: Optional[dict] = None,
                  format: Optional[str] = None, log=print):
    X = load_dataset(base, format)
    ix = ivfadc.build_ivf(X, K=K, coarse_params=coarse_params, residual_m=m, residual_n=n,
                          seed=seed, assign_budget=assign_budget)
    ivfadc.save_ivf(ix, out)
    if log is not None:
        log(f"size={X.count} lists={K} code_bytes={ix.code_bytes} fallbacks={ix.fallbacks} "
            f"fallback_rate={ix.stats['fallback_rate']:.6f} "
            f"graph_hit_rate={ix.stats['graph_hit_rate']:.6f} empty_lists={ix.stats['empty_lists']}")
    return ix


def cmd_ivf_search(index, base, queries, truth=None, ks=(1, 10, 100), list_lens=(1000, 3000, 10000),
                   probes: int = 64, threads: int = 1, out=None, format: Optional[str] = None,
                   timing: bool = True) -> EvalReport:
    """Rows use engine ``ivfadc``; ``k`` is the recall cutoff and ``T`` the
    short-list length; ``accuracy`` is mean recall@k of the true nearest
    neighbour."""
    ks, lens = parse_int_list(ks), parse_int_list(list_lens)
    X = load_dataset(base, format)
    Q = load_dataset(queries, format)
    ix = ivfadc.load_ivf(index, X)
    gt = _load_truth(truth, Q, X, 1)
    kmax = max(ks)
    report = EvalReport(config=dict(index=str(index), ks=ks, list_lens=lens, probes=probes))
    for L in lens:
        rr = ivfadc.RerankParams(probes=probes, list_len=L)

        def one(j):
            t0 = time.perf_counter()
            res = ivfadc.search_ivf(ix, Q.data[j], rr, kmax)
            return res, (time.perf_counter() - t0) * 1e6

        outs = map_in_order(one, range(Q.count), threads)
        us = float(np.mean([o[1] for o in outs]))
        for k in ks:
            rec = float(np.mean([ivfadc.recall_at(o[0], gt[j][0], k) for j, o in enumerate(outs)]))
            report.add("ivfadc", k, L, rec, us, float(L), 0.0)
    _write(report.to_csv(timing), out)
    return report
