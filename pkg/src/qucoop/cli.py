"""Command-line harness.

    qucoop qap-solve nug12.dat --restarts 50 --seeds 5
    qucoop qap-bench qaplib/ --seeds 5 --noise-flips 1 --out bench.csv
    qucoop qap-synth --sizes 3,5,7 --instances 5 --seeds 5
    qucoop register ref.csv tmpl.csv
    qucoop register --synthetic --n 10 --d 2 --angles 15,45,90,135 --seeds 10
    qucoop selftest --quick

Exit codes: 0 success, 1 usage, 2 parse error, 3 solver failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import engine, perm, qap, qubo
from . import registration as reg

EXIT_OK, EXIT_USAGE, EXIT_PARSE, EXIT_SOLVER = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def atomic_write(path, text: str):
    """Write via a temp file in the target directory and rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _emit(args, text: str):
    if args.out:
        atomic_write(args.out, text)
    else:
        sys.stdout.write(text)


def _workers(args) -> int:
    w = args.workers if args.workers is not None else int(os.environ.get("QUCOOP_WORKERS", "1"))
    return max(1, w)


def _fan_out(fn, jobs, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(*j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as ex:
        return list(ex.map(fn, *zip(*jobs)))


def _solver(args) -> qubo.SolveConfig:
    return qubo.SolveConfig(backend=args.solver, num_reads=args.reads, num_sweeps=args.sweeps)


def _iteration(args, seed: int) -> engine.IterationConfig:
    return engine.IterationConfig(
        max_iters=args.max_iters, solver=_solver(args), restarts=args.restarts,
        noise_flips=args.noise_flips, stop_on_fixed_point=not args.noise_flips, seed=seed)


def _seeds(args) -> list[int]:
    if args.seeds < 1:
        raise UsageError("--seeds must be >= 1")
    return [args.seed + i for i in range(args.seeds)]


def _optima(args) -> dict:
    table = qap.known_optima()
    if getattr(args, "optima", None):
        try:
            table.update(json.loads(Path(args.optima).read_text()))
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read optima sidecar {args.optima}: {exc}") from None
    return table


# -- QAP ---------------------------------------------------------------------

def _qap_job(instance: qap.QapInstance, alpha, sense: str, config: engine.IterationConfig) -> dict:
    obj, param = qap.build_composite(instance, alpha, sense)
    rec = engine.run(obj, param, np.zeros(param.dim_params, dtype=np.int8), config=config)
    P = qap.perm_matrix(rec.best_bits, instance.n)
    kb = qap.kb_objective(instance, P)
    return {
        "name": instance.name,
        "n": instance.n,
        "known_optimal": instance.known_optimal,
        "achieved": kb,
        "gap_percent": qap.gap_percent(kb, instance.known_optimal),
        "gm_objective": qap.gm_objective(instance, P),
        "valid": perm.is_valid_permutation(P),
        "iterations": sum(max(len(r.iterations) - 1, 0) for r in (rec.runs or [rec])),
        "wall_ms": sum(r.wall_ms for r in (rec.runs or [rec])),
        "seed": config.seed,
        "permutation": perm.to_image(P),
    }


def _load_instance(path, optima: dict) -> qap.QapInstance:
    try:
        return qap.load_qaplib(path, optima)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from None


def _strip_timing(rows, args):
    if args.omit_timing:
        for r in rows:
            r["wall_ms"] = None
    return rows


def cmd_qap_solve(args) -> int:
    inst = _load_instance(args.path, _optima(args))
    jobs = [(inst, args.alpha, args.sense, _iteration(args, s)) for s in _seeds(args)]
    rows = _strip_timing(_fan_out(_qap_job, jobs, _workers(args)), args)
    best = min(rows, key=lambda r: r["achieved"])
    report = {"best": best, "runs": rows}
    _emit(args, json.dumps(report, indent=2) + "\n")
    gap = "" if best["gap_percent"] is None else f" gap {best['gap_percent']:.2f}%"
    print(f"{inst.name}: {best['achieved']:g}{gap} (seed {best['seed']})", file=sys.stderr)
    return EXIT_OK


def cmd_qap_bench(args) -> int:
    root = Path(args.dir)
    if not root.is_dir():
        raise UsageError(f"{root} is not a directory")
    optima = _optima(args)
    instances = [_load_instance(p, optima) for p in sorted(root.glob("*.dat"))]
    jobs = [(inst, args.alpha, args.sense, _iteration(args, s)) for inst in instances for s in _seeds(args)]
    rows = _strip_timing(_fan_out(_qap_job, jobs, _workers(args)), args)
    _emit(args, qap.bench_csv(rows))
    return EXIT_OK


SYNTH_COLUMNS = ["name", "n", "gm_objective", "recovered", "valid", "iterations", "wall_ms", "seed"]


def cmd_qap_synth(args) -> int:
    sizes = _int_list(args.sizes, "--sizes")
    jobs = [(qap.synth_instance(n, i), args.alpha, "max", _iteration(args, s))
            for n in sizes for i in range(args.instances) for s in _seeds(args)]
    rows = _strip_timing(_fan_out(_qap_job, jobs, _workers(args)), args)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=SYNTH_COLUMNS, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        r["recovered"] = int(r["gm_objective"] < 1e-9 * (1.0 + r["n"]))
        r["valid"] = int(r["valid"])
        w.writerow({c: "" if r.get(c) is None else (f"{r[c]:.6g}" if isinstance(r[c], float) else r[c])
                    for c in SYNTH_COLUMNS})
    _emit(args, buf.getvalue())
    for n in sizes:
        sub = [r for r in rows if r["n"] == n]
        rate = np.mean([r["recovered"] for r in sub])
        print(f"n={n}: recovered {rate:.0%} of {len(sub)} runs", file=sys.stderr)
    return EXIT_OK


# -- registration ------------------------------------------------------------

def load_points(path) -> np.ndarray:
    """``n x d`` points from CSV (one point per row) or a JSON array of points."""
    path = Path(path)
    try:
        if path.suffix.lower() == ".json":
            pts = np.asarray(json.loads(path.read_text()), dtype=np.float64)
        else:
            pts = np.loadtxt(path, delimiter=",", ndmin=2)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from None
    except ValueError as exc:
        raise qap.QapParseError(f"{path}: {exc}") from None
    if pts.ndim != 2:
        raise qap.QapParseError(f"{path}: expected a list of points")
    return pts


def _reg_config(args, seed: int) -> reg.RegistrationConfig:
    return reg.RegistrationConfig(iterations=args.max_iters, m=args.bits, alpha=args.alpha, beta=args.beta,
                                  solver=_solver(args), restarts=args.restarts, seed=seed)


def _reg_job(pair: reg.PointSetPair, config: reg.RegistrationConfig, R_true, P_true) -> dict:
    res = reg.register_full(pair, config)
    out = {
        "R": res.R.tolist(),
        "permutation": perm.to_image(res.P),
        "objective": res.objective,
        "objective_trajectory": res.record.objectives.tolist(),
        "seed": config.seed,
        "wall_ms": res.record.wall_ms,
    }
    if R_true is not None:
        out["rotation_error_deg"] = reg.rotation_error_deg(res.R, R_true)
    if P_true is not None:
        out["permutation_correct"] = bool(np.array_equal(res.P, P_true))
    return out


def cmd_register(args) -> int:
    if args.synthetic:
        return _register_synthetic(args)
    if not (args.ref and args.tmpl):
        raise UsageError("register needs REF and TMPL point files, or --synthetic")
    X, Y = load_points(args.ref), load_points(args.tmpl)
    if X.shape[1] not in (2, 3) or X.shape[1] != Y.shape[1]:
        raise UsageError(f"point dimension must be 2 or 3 and equal in both files, got {X.shape[1]} and {Y.shape[1]}")
    pair = reg.PointSetPair.from_points(X, Y)
    R_true = None
    if args.truth:
        R_true = np.asarray(json.loads(Path(args.truth).read_text())["R"], dtype=np.float64)
    jobs = [(pair, _reg_config(args, s), R_true, None) for s in _seeds(args)]
    rows = _strip_timing(_fan_out(_reg_job, jobs, _workers(args)), args)
    best = dict(min(rows, key=lambda r: r["objective"]))
    best["runs"] = [{k: r[k] for k in ("seed", "objective") if k in r} for r in rows]
    _emit(args, json.dumps(best, indent=2) + "\n")
    return EXIT_OK


def _register_synthetic(args) -> int:
    if args.d not in (2, 3):
        raise UsageError(f"--d must be 2 or 3, got {args.d}")
    angles = _int_list(args.angles, "--angles")
    jobs = []
    for ang in angles:
        for s in _seeds(args):
            pair, R_true, P_true = reg.synth_pair(args.n, args.d, ang, s)
            jobs.append((pair, _reg_config(args, s), R_true, P_true))
    rows = _strip_timing(_fan_out(_reg_job, jobs, _workers(args)), args)
    summary = []
    for i, ang in enumerate(angles):
        sub = rows[i * args.seeds:(i + 1) * args.seeds]
        for r in sub:
            r["angle_deg"] = ang
        errs = [r["rotation_error_deg"] for r in sub]
        ok = [r["rotation_error_deg"] <= 5.0 and r["permutation_correct"] for r in sub]
        summary.append({"angle_deg": ang, "mean_rotation_error_deg": float(np.mean(errs)),
                        "success_rate": float(np.mean(ok))})
        print(f"{ang:>4} deg: mean error {np.mean(errs):6.2f} deg, success {np.mean(ok):.0%}", file=sys.stderr)
    _emit(args, json.dumps({"n": args.n, "d": args.d, "summary": summary, "runs": rows}, indent=2) + "\n")
    return EXIT_OK


# -- selftest ----------------------------------------------------------------

def _check_round_trip(quick: bool, fault: bool) -> bool:
    import itertools
    for n in range(2, (4 if quick else 6) + 1):
        order = perm.TranspositionOrder(n)
        for img in itertools.permutations(range(1, n + 1)):
            P = perm.from_image(img)
            back = perm.apply(perm.PermutationCode(order, perm.decompose(P, order)))
            if fault:
                back = np.roll(back, 1, axis=0)
            if not np.array_equal(back, P):
                return False
    return True


def _check_lemma3(quick: bool, fault: bool) -> bool:
    n = 3 if quick else 4
    k = n * (n - 1) // 2
    grid = ((np.arange(2**k)[:, None] >> np.arange(k)) & 1).astype(np.int8)
    for a in grid:
        for x in grid:
            M = perm.linearized(a, x, n)
            if fault:
                M[0, 0] += 1
            r, c = perm.rowcol_sums(M)
            if not (np.all(r == 1) and np.all(c == 1)):
                return False
            if perm.disjoint_conjugates_check(a, x, perm.TranspositionOrder(n)) != perm.is_valid_permutation(M):
                return False
    return True


def _check_fidelity(quick: bool, fault: bool) -> bool:
    rng = np.random.default_rng(7)
    for n in ((3, 4) if quick else (3, 4, 5)):
        inst = qap.synth_instance(n, int(rng.integers(1 << 30)))
        obj, param = qap.build_composite(inst, sense="max")
        k = param.dim_params
        anchor = rng.integers(0, 2, k)
        lin = engine.linearize(param, anchor)
        q = engine.assemble_qubo(obj, lin)
        for x in ((np.arange(2**k)[:, None] >> np.arange(k)) & 1):
            e = qubo.energy(q, x) + (1.0 if fault else 0.0)
            f = obj(lin.apply(x))
            if abs(e - f) > 1e-9 * (1 + abs(f)):
                return False
    return True


def _check_sa_exact(quick: bool, fault: bool) -> bool:
    rng = np.random.default_rng(11)
    count, k = (20, 10) if quick else (50, 12)
    cfg = qubo.SolveConfig(num_reads=50, num_sweeps=1000 if not fault else 1)
    hits = 0
    for i in range(count):
        M = rng.uniform(-1, 1, (k, k))
        inst = qubo.QuboInstance(M, rng.uniform(-1, 1, k), 0.0)
        ex = qubo.solve(inst, qubo.SolveConfig(backend="exact"))
        sa = qubo.solve(inst, cfg.with_seed(i))
        hits += sa.energy <= ex.energy + 1e-9
    return hits >= 0.95 * count


SELFTESTS = [
    ("round-trip", "permutation round trip", _check_round_trip),
    ("rowcol", "linearized row/column sums", _check_lemma3),
    ("fidelity", "QUBO assembly fidelity", _check_fidelity),
    ("sa-exact", "annealer vs exhaustive", _check_sa_exact),
]


def cmd_selftest(args) -> int:
    ok_all = True
    width = max(len(name) for _, name, _ in SELFTESTS)
    for key, name, fn in SELFTESTS:
        t0 = time.perf_counter()
        ok = fn(args.quick, args.inject_fault in (key, "all"))
        ok_all &= ok
        print(f"{name:<{width}}  {'PASS' if ok else 'FAIL'}  {time.perf_counter() - t0:6.2f}s")
    return EXIT_OK if ok_all else EXIT_SOLVER


# -- parser ------------------------------------------------------------------

def _int_list(text: str, flag: str) -> list[int]:
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"{flag} expects comma-separated integers, got {text!r}") from None
    if not vals:
        raise UsageError(f"{flag} is empty")
    return vals


def _add_common(p, *, max_iters=50, restarts=0, reads=50, sweeps=1000):
    g = p.add_argument_group("solver")
    g.add_argument("--solver", choices=["sa", "exact"], default="sa")
    g.add_argument("--reads", type=int, default=reads)
    g.add_argument("--sweeps", type=int, default=sweeps)
    g.add_argument("--max-iters", type=int, default=max_iters)
    g.add_argument("--restarts", type=int, default=restarts)
    g.add_argument("--noise-flips", type=int, default=0)
    g.add_argument("--alpha", type=float, default=None, help="penalty factor (default: instance-derived)")
    g = p.add_argument_group("run")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds starting at --seed")
    g.add_argument("--out", help="output file (written atomically); default stdout")
    g.add_argument("--workers", type=int, default=None, help="process pool size (env QUCOOP_WORKERS)")
    g.add_argument("--omit-timing", action="store_true", help="leave wall_ms blank for byte-stable output")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qucoop", description="Composite binary optimization via QUBO linearization.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("qap-solve", help="solve one QAPLIB instance")
    p.add_argument("path")
    p.add_argument("--optima", help="JSON sidecar {name: optimal value}")
    p.add_argument("--sense", choices=["min", "max"], default="min")
    _add_common(p)
    p.set_defaults(func=cmd_qap_solve)

    p = sub.add_parser("qap-bench", help="benchmark every .dat file in a directory")
    p.add_argument("dir")
    p.add_argument("--optima", help="JSON sidecar {name: optimal value}")
    p.add_argument("--sense", choices=["min", "max"], default="min")
    _add_common(p)
    p.set_defaults(func=cmd_qap_bench)

    p = sub.add_parser("qap-synth", help="synthetic graph matching with a known isomorphism")
    p.add_argument("--sizes", default="3,5,7")
    p.add_argument("--instances", type=int, default=5)
    _add_common(p, restarts=10, reads=20, sweeps=500)
    p.set_defaults(func=cmd_qap_synth)

    p = sub.add_parser("register", help="rigid point-set registration without correspondences")
    p.add_argument("ref", nargs="?")
    p.add_argument("tmpl", nargs="?")
    p.add_argument("--truth", help="JSON file with the true rotation {\"R\": ...}")
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--bits", type=int, default=None, help="bits per rotation coordinate")
    p.add_argument("--synthetic", action="store_true", help="run an angle sweep on random isomorphic sets")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--angles", default="15,45,90,135")
    _add_common(p, max_iters=15, restarts=9, reads=20, sweeps=500)
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("selftest", help="run the invariant suites")
    p.add_argument("--quick", action="store_true", help="small exhaustive suites only")
    p.add_argument("--inject-fault", default=None, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"qucoop: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except qap.QapParseError as exc:
        print(f"qucoop: parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (qubo.QuboError, engine.EngineError, reg.RegistrationError, perm.PermutationError) as exc:
        print(f"qucoop: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
