"""Command-line harness: ``permabound <command> [options]``.

Every command builds a plain ``dict`` report plus a list of flat rows for CSV,
and an exit code. The exit code is nonzero only when a proven inequality is
violated; conjecture probes always exit 0.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__, bounds
from .betheopt import FW_MAX_ITER, FW_TOL, capacity_qj, maximize_cw
from .errors import DomainError, PermaboundError
from .exactperm import DP_MAX_N, log_perm_kn, permanent_aJbI, permanent_ryser, subperm_vector
from .matcore import (
    family_example1, family_example2, k_counterexample, random_doubly_stochastic, read_matrix,
)
from .randmodels import (
    enumerate_ri, estimate_emd, estimate_expected_perm, estimate_prob_boolean, sample_bm,
    sample_cbm,
)
from .report import bound_report

REFERENCE_ARGMAX_T = 0.721
CONJECTURES = ("strong", "mild", "optimizational", "cap_product", "sidak", "lms")
CORPORA = ("random", "regular", "diag_dominant", "k_family")
FAMILIES = ("example1", "example2", "uniform", "regular")


# -- output ---------------------------------------------------------------------

def _fmt_float(x: float) -> str:
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    return format(x, ".17g")


def to_json(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON text with every float written to 17 significant digits.

    ``nan`` and infinities become the strings ``"nan"``, ``"inf"``, ``"-inf"``.
    """
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    elif isinstance(obj, np.generic):
        obj = obj.item()
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return _fmt_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {to_json(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(to_json(v, indent, _level + 1) for v in obj) + "]"
        items = [pad + to_json(v, indent, _level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _csv_cell(v) -> str:
    if isinstance(v, np.generic):
        v = v.item()
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return _fmt_float(v).strip('"')
    return str(v)


def to_csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    header = list(rows[0])
    for r in rows[1:]:
        header += [k for k in r if k not in header]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_csv_cell(r.get(k)) for k in header])
    return buf.getvalue()


def _emit(text: str, out_path: str | None):
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _map(fn, items, threads: int):
    """Order-preserving map, optionally on a thread pool."""
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


# -- commands -------------------------------------------------------------------

def cmd_bounds(args):
    A = read_matrix(args.matrix)
    rep = bound_report(A, matrix_id=args.id or os.path.basename(args.matrix),
                       sinkhorn=args.sinkhorn, tol=args.tol, max_iter=args.max_iter)
    if args.trace:
        res = maximize_cw(A, tol=args.tol, max_iter=args.max_iter)
        with open(args.trace, "w", encoding="utf-8") as fh:
            fh.write(res.trace_csv())
    d = rep.to_dict()
    return d, [d], 0 if rep.chain_ok() else 1


def _random_ds_corpus(seed: int, count: int, n_min: int, n_max: int) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    return [random_doubly_stochastic(int(rng.integers(n_min, n_max + 1)), rng) for _ in range(count)]


VERIFY_GROUPS = {
    "bethe": ("per_ge_max_cw", "max_cw_ge_F"),
    "schrijver": ("schrijver",),
    "vdw": ("van_der_waerden",),
    "lms": ("lms_ge_F",),
    "sd": ("sd_ge_F",),
    "gurvits": ("gurvits", "column_count"),
    "capacity": ("capacity_qj_ge_cpr",),
}
VERIFY_TOL = {
    "per_ge_max_cw": 1e-7, "max_cw_ge_F": 1e-7, "schrijver": 1e-9, "van_der_waerden": 1e-9,
    "lms_ge_F": 1e-12, "sd_ge_F": 1e-12, "gurvits": 1e-9, "column_count": 1e-9,
    "capacity_qj_ge_cpr": 1e-6,
}


def _verify_one(P: np.ndarray, checks: set, tol: float, max_iter: int) -> dict:
    n = P.shape[0]
    lp = permanent_ryser(P).log
    lf = bounds.log_F(P)
    out = {}
    if checks & {"per_ge_max_cw", "max_cw_ge_F"}:
        cw = maximize_cw(P, tol=tol, max_iter=max_iter, record_trace=False).value
        out["per_ge_max_cw"] = lp - cw
        out["max_cw_ge_F"] = cw - lf
    if "schrijver" in checks:
        with np.errstate(divide="ignore"):
            rhs = float(np.log1p(-np.minimum(P, 1.0)).sum())
        out["schrijver"] = permanent_ryser(bounds.schrijver_tilde(P)).log - rhs
    if "van_der_waerden" in checks:
        out["van_der_waerden"] = lp - bounds.log_vdw(n)
    if "lms_ge_F" in checks:
        out["lms_ge_F"] = bounds.log_lms(P) - lf
    if "sd_ge_F" in checks:
        out["sd_ge_F"] = bounds.log_sd(P) - lf
    if "gurvits" in checks:
        out["gurvits"] = lp - bounds.log_gurvits_bound(P)
        out["column_count"] = lp - bounds.log_cpr_bound(P)
    if "capacity_qj_ge_cpr" in checks:
        out["capacity_qj_ge_cpr"] = min(
            capacity_qj(P, j).value - bounds.log_cpr(P, j) for j in range(n)
        )
    return out


def cmd_verify(args):
    groups = args.inequality or ["all"]
    names = []
    for g in groups:
        for name in (sum(VERIFY_GROUPS.values(), ()) if g == "all" else VERIFY_GROUPS[g]):
            if name not in names:
                names.append(name)
    if args.n_max > 9:
        raise DomainError("verify uses exact permanents and needs n_max <= 9")
    corpus = _random_ds_corpus(args.seed, args.count, args.n_min, args.n_max)
    results = _map(lambda P: _verify_one(P, set(names), args.tol, args.max_iter), corpus, args.threads)
    checks, rows, total = {}, [], 0
    for name in names:
        slacks = np.array([r[name] for r in results])
        viol = int(np.sum(slacks < -VERIFY_TOL[name]))
        total += viol
        checks[name] = {"checked": len(slacks), "violations": viol,
                        "min_slack": float(slacks.min()), "tolerance": VERIFY_TOL[name]}
        rows.append({"inequality": name, **checks[name]})
    report = {"command": "verify", "seed": args.seed, "count": args.count,
              "n_min": args.n_min, "n_max": args.n_max, "checks": checks, "violations": total}
    return report, rows, 0 if total == 0 else 1


def s1_minus_m1_argmax(step: float = 0.001) -> float:
    ts = np.arange(1, round(1 / step)) * step
    vals = [bounds.s_curve(1, t) - bounds.m_curve(1, t) for t in ts]
    return float(ts[int(np.argmax(vals))])


def cmd_counterexample(args):
    lo = args.n_min + (args.n_min % 2)
    rows = []
    cross_lms = cross_sd = None
    for n in range(max(lo, 2), args.n_max + 1, 2):
        lp = log_perm_kn(n).log
        ll, ls = bounds.log_lms_kn(n), bounds.log_sd_kn(n)
        rows.append({"n": n, "log_per": lp, "log_lms": ll, "log_sd": ls,
                     "lms_gt_per": ll > lp, "sd_gt_per": ls > lp})
        if cross_lms is None and ll > lp:
            cross_lms = n
        if cross_sd is None and ls > lp:
            cross_sd = n
    # Closed forms against the generic functionals on materialised K_n.
    diffs = []
    for n in (2, 4, 6, 8, 10):
        K = k_counterexample(n)
        diffs.append(abs(bounds.log_lms(K) - bounds.log_lms_kn(n)))
        diffs.append(abs(bounds.log_sd(K) - bounds.log_sd_kn(n)))
    report = {
        "command": "counterexample",
        "n_min": args.n_min, "n_max": args.n_max,
        "crossover_lms": cross_lms, "crossover_sd": cross_sd,
        "reference_argmax_t": REFERENCE_ARGMAX_T, "grid_argmax_t": s1_minus_m1_argmax(),
        "closed_form_max_abs_diff": max(diffs),
        "table": rows,
    }
    return report, rows, 0


def cmd_almc(args):
    r, n = args.r, args.n
    ms = [args.m] if args.m else list(range(1, n + 1))
    if args.mode == "enumerate":
        mats = enumerate_ri(r, n, cap=args.cap)
    else:
        rng = np.random.default_rng(args.seed)
        mats = [sample_bm(r, n, rng) for _ in range(args.samples)]
    vecs = np.array(_map(lambda M: subperm_vector(M).values, mats, args.threads))
    mins = vecs.min(axis=0)
    rows, viol = [], 0
    for m in ms:
        lsf = bounds.log_sf(r, n, m)
        lmin = math.log(mins[m]) if mins[m] > 0 else float("-inf")
        slack = lmin - lsf
        bad = slack < -1e-9 * max(1.0, abs(lsf))
        viol += int(bad)
        rows.append({"m": m, "min_per_m": float(mins[m]), "log_min_per_m": lmin,
                     "log_sf": lsf, "slack": slack, "violation": bool(bad)})
    conv = []
    for nn in _int_list(args.n_list):
        m = args.t * nn
        if abs(m - round(m)) > 1e-9:
            raise DomainError(f"t * n must be an integer, got t={args.t}, n={nn}")
        rate = bounds.log_sf(r, nn, int(round(m))) / nn
        g = bounds.g_curve(r, args.t)
        conv.append({"n": nn, "log_sf_over_n": rate, "g": g, "abs_diff": abs(rate - g)})
    diffs = [c["abs_diff"] for c in conv]
    report = {
        "command": "almc", "r": r, "n": n, "mode": args.mode, "matrices": len(mats),
        "violations": viol, "rows": rows, "t": args.t, "convergence": conv,
        "monotone": bool(all(a > b for a, b in zip(diffs, diffs[1:]))),
    }
    return report, rows, 0 if viol == 0 else 1


def _family_point(family: str, n: int, rng, r: int):
    if family == "example1":
        a = 1 / (2 * (n - 1))
        return permanent_aJbI(n, a, 0.5 - a).log, bounds.log_F(family_example1(n)), 0.5 * math.log(math.e / 2)
    if family == "example2":
        if n % 2:
            return None
        P = family_example2(n // 2)
        lp = permanent_ryser(P).log if n <= 20 else -(n // 2) * math.log(2)
        return lp, bounds.log_F(P), 0.5 * math.log(2)
    if family == "uniform":
        return bounds.log_vdw(n), bounds.log_F(np.full((n, n), 1.0 / n)), 0.0
    if family == "regular":
        if n > DP_MAX_N or r > n:
            return None
        P = sample_cbm(r, n, rng) / r
        return permanent_ryser(P).log, bounds.log_F(P), None
    raise DomainError(f"family must be one of {FAMILIES}")


def cmd_ratio_scan(args):
    rng = np.random.default_rng(args.seed)
    rows, viol = [], 0
    for n in range(max(args.n_min, 2), args.n_max + 1, args.step):
        pt = _family_point(args.family, n, rng, args.r)
        if pt is None:
            continue
        lp, lf, ref = pt
        viol += int(lp < lf - 1e-9 * max(1.0, abs(lf)))
        rows.append({"n": n, "log_per": lp, "log_F": lf, "rate": (lp - lf) / n, "reference": ref})
    report = {"command": "ratio-scan", "family": args.family, "seed": args.seed,
              "violations": viol, "table": rows}
    return report, rows, 0 if viol == 0 else 1


def _probe_corpus(args) -> list[tuple[np.ndarray, float, int]]:
    """Triples ``(P, ln per P, n)``; ``n`` is the family parameter, not always the size."""
    rng = np.random.default_rng(args.seed)
    out = []
    if args.corpus == "k_family":
        for n in range(max(2, args.n_min + args.n_min % 2), args.n_max + 1, 2):
            out.append((k_counterexample(n), log_perm_kn(n).log, n))
        return out
    for _ in range(args.count):
        n = int(rng.integers(args.n_min, args.n_max + 1))
        if args.corpus == "random":
            P = random_doubly_stochastic(n, rng)
        elif args.corpus == "regular":
            P = sample_cbm(min(args.r, n), n, rng) / min(args.r, n)
        elif args.corpus == "diag_dominant":
            lam = 0.5 + 0.5 * rng.random()
            P = lam * np.eye(n) + (1 - lam) * random_doubly_stochastic(n, rng)
        else:
            raise DomainError(f"corpus must be one of {CORPORA}")
        out.append((P, permanent_ryser(P).log, n))
    return out


def _probe_slack(conj: str, P: np.ndarray, lp: float, args) -> float:
    n = P.shape[0]
    half_log2 = 0.5 * math.log(2)
    if conj == "strong":
        return n * half_log2 + bounds.log_F(P) - lp
    if conj == "mild":
        return n * half_log2 + args.c * bounds.log_F(P) - lp
    if conj == "optimizational":
        cw = maximize_cw(P, tol=args.tol, max_iter=args.max_iter, record_trace=False).value
        return n * half_log2 + cw - lp
    if conj == "cap_product":
        return lp - sum(capacity_qj(P, j).value for j in range(n))
    if conj == "sidak":
        return lp - bounds.log_sd(P)
    if conj == "lms":
        return lp - bounds.log_lms(P)
    raise DomainError(f"conjecture must be one of {CONJECTURES}")


def cmd_probe(args):
    corpus = _probe_corpus(args)
    slacks = _map(lambda item: _probe_slack(args.conjecture, item[0], item[1], args), corpus, args.threads)
    rows = [{"index": i, "n": n, "size": P.shape[0], "slack": s}
            for i, ((P, _, n), s) in enumerate(zip(corpus, slacks))]
    s = np.array(slacks)
    counts, edges = np.histogram(s, bins=args.bins)
    neg = [row["n"] for row in rows if row["slack"] < 0]
    report = {
        "command": "probe", "conjecture": args.conjecture, "corpus": args.corpus, "seed": args.seed,
        "count": len(rows), "min_slack": float(s.min()), "max_slack": float(s.max()),
        "negative": len(neg), "first_negative_n": min(neg) if neg else None,
        "histogram": {"counts": counts.tolist(), "edges": edges.tolist()},
        "rows": rows,
    }
    return report, rows, 0


def cmd_sample(args):
    kw = dict(samples=args.samples, seed=args.seed, threads=args.threads, keep_values=bool(args.dump))
    if args.estimator == "perm":
        est = estimate_expected_perm(args.model, args.r, args.n, **kw)
    elif args.estimator == "prob_boolean":
        est = estimate_prob_boolean(args.model, args.r, args.n, **kw)
    else:
        if args.m is None:
            raise DomainError("estimator emd needs --m")
        est = estimate_emd(args.model, args.r, args.n, args.m, **kw)
    if args.dump:
        with open(args.dump, "w", encoding="utf-8") as fh:
            fh.write(est.samples_csv())
    report = {"command": "sample", "model": args.model, "estimator": args.estimator,
              "r": args.r, "n": args.n, "m": args.m, **est.to_dict(), "log_mean": est.log_mean}
    return report, [report], 0


# -- argument parsing -------------------------------------------------------------

def _default_threads() -> int:
    env = os.environ.get("PERMABOUND_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


GLOBAL_DEFAULTS = {"seed": 0, "tol": FW_TOL, "max_iter": FW_MAX_ITER, "out": None, "format": "json"}


def _add_global(p: argparse.ArgumentParser):
    s = argparse.SUPPRESS
    p.add_argument("--seed", type=int, default=s, help="RNG seed (default 0)")
    p.add_argument("--tol", type=float, default=s, help="optimiser tolerance (default 1e-8)")
    p.add_argument("--max-iter", dest="max_iter", type=int, default=s, help="optimiser iteration cap")
    p.add_argument("--threads", type=int, default=s,
                   help="worker threads (default $PERMABOUND_THREADS or CPU count)")
    p.add_argument("--out", default=s, help="write the report here instead of stdout")
    p.add_argument("--format", choices=("json", "csv"), default=s)


def build_parser() -> argparse.ArgumentParser:
    # No prefix matching: --t (almc) would otherwise clash with --tol and --threads.
    parser = argparse.ArgumentParser(prog="permabound", description=__doc__.splitlines()[0],
                                     allow_abbrev=False)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _add_global(parser)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bounds", allow_abbrev=False, help="every bound for one matrix file")
    p.add_argument("matrix", help="CSV or JSON matrix file")
    p.add_argument("--sinkhorn", action="store_true", help="report on the Sinkhorn-scaled matrix")
    p.add_argument("--id", default=None, help="matrix id in the report")
    p.add_argument("--trace", default=None, help="write the optimiser trace CSV here")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("verify", allow_abbrev=False, help="batch-check proven inequalities")
    p.add_argument("--count", type=int, default=500)
    p.add_argument("--n-min", dest="n_min", type=int, default=3)
    p.add_argument("--n-max", dest="n_max", type=int, default=9)
    p.add_argument("--inequality", action="append", choices=["all", *VERIFY_GROUPS])
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("counterexample", allow_abbrev=False, help="LMS / SD against per on the K_n family")
    p.add_argument("--n-min", dest="n_min", type=int, default=2)
    p.add_argument("--n-max", dest="n_max", type=int, default=120)
    p.set_defaults(func=cmd_counterexample)

    p = sub.add_parser("almc", allow_abbrev=False, help="m-subpermanent lower bound on RI(r, n)")
    p.add_argument("--r", type=int, default=2)
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--m", type=int, default=None, help="single m (default: all 1..n)")
    p.add_argument("--mode", choices=("enumerate", "sample"), default="enumerate")
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--cap", type=int, default=1_000_000)
    p.add_argument("--t", type=float, default=0.5)
    p.add_argument("--n-list", dest="n_list", default="4,8,12,16,24")
    p.set_defaults(func=cmd_almc)

    p = sub.add_parser("ratio-scan", allow_abbrev=False, help="(ln per - ln F)/n along a matrix family")
    p.add_argument("--family", choices=FAMILIES, default="example1")
    p.add_argument("--n-min", dest="n_min", type=int, default=2)
    p.add_argument("--n-max", dest="n_max", type=int, default=20)
    p.add_argument("--step", type=int, default=1)
    p.add_argument("--r", type=int, default=3)
    p.set_defaults(func=cmd_ratio_scan)

    p = sub.add_parser("probe", allow_abbrev=False, help="report slack of a conjectured inequality")
    p.add_argument("--conjecture", choices=CONJECTURES, required=True)
    p.add_argument("--corpus", choices=CORPORA, default="random")
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--n-min", dest="n_min", type=int, default=3)
    p.add_argument("--n-max", dest="n_max", type=int, default=8)
    p.add_argument("--r", type=int, default=3)
    p.add_argument("--c", type=float, default=0.5, help="exponent of F for the mild form")
    p.add_argument("--bins", type=int, default=10)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("sample", allow_abbrev=False, help="Monte Carlo estimate for BM / HW")
    p.add_argument("--model", choices=("bm", "hw"), default="bm")
    p.add_argument("--estimator", choices=("perm", "prob_boolean", "emd"), default="prob_boolean")
    p.add_argument("--r", type=int, default=2)
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--dump", default=None, help="write per-sample values as CSV here")
    p.set_defaults(func=cmd_sample)

    for action in sub.choices.values():
        _add_global(action)
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    args = build_parser().parse_args(argv)
    for k, v in GLOBAL_DEFAULTS.items():
        if not hasattr(args, k):
            setattr(args, k, v)
    if not hasattr(args, "threads"):
        args.threads = _default_threads()
    return args


def main(argv=None) -> int:
    args = parse_args(argv)
    try:
        report, rows, code = args.func(args)
    except (PermaboundError, OSError) as exc:
        print(f"permabound: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    text = to_json(report) + "\n" if args.format == "json" else to_csv(rows)
    _emit(text, args.out)
    return code


if __name__ == "__main__":
    sys.exit(main())
