"""Command-line surface: register, synth, bench, pairwise.

Exit codes: 0 on success (certificate holds, or an approximation was
explicitly requested), 2 when the evaluation budget ran out before the
certificate closed, 1 on input or usage errors.  The worker count is taken
from the RIGID_QBNB_THREADS environment variable (0 = all cores).
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .geometry import (
    DegenerateCloudError,
    PointCloud,
    XYZFormatError,
    format_xyz,
    parse_xyz,
)
from .records import atomic_write, dumps_json17, format_float, generations_csv, run_record
from .search import SearchAborted, SearchConfig, register
from .synth import SynthSpec, gen_synthetic, pairwise_matrix
from .search import _resolve_threads

_MAX_EVALS = 10**8


class _UsageError(Exception):
    pass


class _InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _threads_from_env() -> int:
    raw = os.environ.get("RIGID_QBNB_THREADS", "1")
    try:
        value = int(raw)
    except ValueError:
        raise _InputError(f"RIGID_QBNB_THREADS must be an integer, got {raw!r}") from None
    if value < 0:
        raise _InputError("RIGID_QBNB_THREADS must be >= 0")
    return _resolve_threads(value)


def _read_cloud(path: str) -> PointCloud:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise _InputError(f"cannot read {path}: {exc}") from None
    try:
        return parse_xyz(text)
    except XYZFormatError as exc:
        raise _InputError(f"{path}: {exc}") from None


def _normalize_pair(P: PointCloud, Q: PointCloud) -> tuple[PointCloud, PointCloud]:
    # Center each cloud, then scale both by the single larger extent so the
    # relative geometry (hence the optimal energy) is preserved while both
    # clouds land in [-1, 1]^d with zero mean.
    pc = P.points - P.points.mean(axis=0)
    qc = Q.points - Q.points.mean(axis=0)
    maxabs = max(float(np.abs(pc).max()), float(np.abs(qc).max()))
    if maxabs <= 0:
        raise DegenerateCloudError("all points coincide; clouds cannot be normalized")
    return PointCloud(pc / maxabs), PointCloud(qc / maxabs)


def _build_parser() -> _Parser:
    parser = _Parser(prog="rigid-qbnb", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    reg = sub.add_parser("register", help="register two point-cloud files")
    reg.add_argument("--mode", choices=["cp", "bijective"], required=True)
    reg.add_argument("--bound", choices=["quasi", "linear"], default="quasi")
    reg.add_argument("--epsilon", type=float, required=True)
    reg.add_argument("--source", required=True)
    reg.add_argument("--target", required=True)
    reg.add_argument("--allow-reflections", action="store_true")
    reg.add_argument("--dt-grid", type=int, default=None)
    reg.add_argument("--strategy", choices=["bfs", "best-first"], default=None)
    reg.add_argument("--out", required=True)
    reg.set_defaults(func=_cmd_register)

    syn = sub.add_parser("synth", help="generate a synthetic instance")
    syn.add_argument("--n", type=int, required=True)
    syn.add_argument("--sigma", type=float, required=True)
    syn.add_argument("--seed", type=int, required=True)
    syn.add_argument("--dim", type=int, choices=[2, 3], required=True)
    syn.add_argument("--out-prefix", required=True)
    syn.set_defaults(func=_cmd_synth)

    ben = sub.add_parser("bench", help="sweep epsilon/sigma over synthetic instances")
    ben.add_argument("--mode", choices=["cp", "bijective"], required=True)
    ben.add_argument("--bound", choices=["quasi", "linear"], default="quasi")
    ben.add_argument("--epsilon-list", required=True)
    ben.add_argument("--sigma-list", required=True)
    ben.add_argument("--n", type=int, required=True)
    ben.add_argument("--instances", type=int, required=True)
    ben.add_argument("--seed", type=int, required=True)
    ben.add_argument("--out", required=True)
    ben.add_argument("--per-generation", action="store_true")
    ben.set_defaults(func=_cmd_bench)

    pw = sub.add_parser("pairwise", help="all-pairs bijective distances for a folder")
    pw.add_argument("--dir", required=True)
    pw.add_argument("--epsilon", type=float, required=True)
    pw.add_argument("--allow-reflections", action="store_true")
    pw.add_argument("--out-prefix", required=True)
    pw.set_defaults(func=_cmd_pairwise)

    return parser


def _default_strategy(mode: str) -> str:
    return "best-first" if mode == "cp" else "bfs"


def _cmd_register(args) -> int:
    if args.dt_grid is not None and args.mode != "cp":
        raise _InputError("--dt-grid is only available with --mode cp")
    threads = _threads_from_env()
    P = _read_cloud(args.source)
    Q = _read_cloud(args.target)
    if P.dim != Q.dim:
        raise _InputError(f"dimension mismatch: {args.source} is {P.dim}D, {args.target} is {Q.dim}D")
    if args.mode == "bijective" and len(P) != len(Q):
        raise _InputError(
            f"bijective mode needs equal point counts, got {len(P)} and {len(Q)}"
        )
    P, Q = _normalize_pair(P, Q)
    config = SearchConfig(
        epsilon=args.epsilon,
        bound_kind=args.bound,
        strategy=args.strategy or _default_strategy(args.mode),
        max_evals=_MAX_EVALS,
        allow_reflections=args.allow_reflections,
        dt_grid=args.dt_grid,
        threads=threads,
    )
    try:
        result = register(P, Q, args.mode, config)
    except SearchAborted as exc:
        raise _InputError(str(exc)) from None
    spec = {"n": len(P), "sigma": None, "seed": None, "dim": P.dim, "mode": args.mode}
    atomic_write(args.out, dumps_json17(run_record(spec, config, result)) + "\n")
    print(f"ub={format_float(result.ub)}")
    print(f"lb={format_float(result.lb)}")
    print(f"total_evals={result.total_evals}")
    return 0 if result.completed else 2


def _cmd_synth(args) -> int:
    try:
        spec = SynthSpec(n=args.n, sigma=args.sigma, seed=args.seed, dim=args.dim)
    except ValueError as exc:
        raise _InputError(str(exc)) from None
    P, Q, truth = gen_synthetic(spec)
    prefix = args.out_prefix
    atomic_write(f"{prefix}_P.xyz", format_xyz(P))
    atomic_write(f"{prefix}_Q.xyz", format_xyz(Q))
    normalized = truth.normalized_motion
    truth_doc = {
        "rotation_vec": [float(v) for v in truth.motion.rot],
        "translation": [float(v) for v in truth.motion.trans],
        "scale": float(truth.scale),
        "shift_source": [float(v) for v in truth.shift_p],
        "shift_target": [float(v) for v in truth.shift_q],
        "normalized": {
            "rotation_vec": [float(v) for v in normalized.rot],
            "translation": [float(v) for v in normalized.trans],
        },
    }
    atomic_write(f"{prefix}_truth.json", dumps_json17(truth_doc) + "\n")
    return 0


def _parse_float_list(raw: str, flag: str) -> list[float]:
    try:
        values = [float(tok) for tok in raw.split(",") if tok.strip() != ""]
    except ValueError:
        raise _InputError(f"{flag} must be a comma-separated list of numbers") from None
    if not values:
        raise _InputError(f"{flag} must not be empty")
    return values


def _cmd_bench(args) -> int:
    epsilons = _parse_float_list(args.epsilon_list, "--epsilon-list")
    sigmas = _parse_float_list(args.sigma_list, "--sigma-list")
    if args.instances < 1:
        raise _InputError("--instances must be positive")
    threads = _threads_from_env()
    dim = 3 if args.mode == "cp" else 2
    strategy = _default_strategy(args.mode)

    jobs = []
    for eps in epsilons:
        for sigma in sigmas:
            for inst in range(args.instances):
                jobs.append((eps, sigma, args.seed + inst))

    def run_one(job):
        eps, sigma, seed = job
        spec = SynthSpec(n=args.n, sigma=sigma, seed=seed, dim=dim, mode=args.mode)
        P, Q, _ = gen_synthetic(spec)
        config = SearchConfig(epsilon=eps, bound_kind=args.bound, strategy=strategy,
                              max_evals=_MAX_EVALS, threads=1)
        return spec, config, register(P, Q, args.mode, config)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(run_one, jobs))
    else:
        outcomes = [run_one(job) for job in jobs]

    header = "kind,mode,bound,dim,n,sigma,epsilon,seed,ub,lb,total_evals,certificate_valid"
    lines = [header]
    incomplete = False
    by_cell: dict[tuple[float, float], list[int]] = {}
    for (spec, config, result) in outcomes:
        incomplete = incomplete or not result.completed
        by_cell.setdefault((config.epsilon, spec.sigma), []).append(result.total_evals)
        lines.append(
            ",".join([
                "run", args.mode, args.bound, str(spec.dim), str(spec.n),
                format_float(spec.sigma), format_float(config.epsilon), str(spec.seed),
                format_float(result.ub), format_float(result.lb),
                str(result.total_evals), str(result.certificate_valid).lower(),
            ])
        )
    for eps in epsilons:
        for sigma in sigmas:
            evals = by_cell[(eps, sigma)]
            mean = sum(evals) / len(evals)
            lines.append(
                ",".join([
                    "mean", args.mode, args.bound, str(dim), str(args.n),
                    format_float(sigma), format_float(eps), "",
                    "", "", format_float(mean), "",
                ])
            )
    atomic_write(args.out, "\n".join(lines) + "\n")

    if args.per_generation:
        stem = str(Path(args.out).with_suffix(""))
        for (spec, config, result) in outcomes:
            name = f"{stem}_gen_eps{config.epsilon:g}_sigma{spec.sigma:g}_seed{spec.seed}.csv"
            atomic_write(name, generations_csv(result))
    return 2 if incomplete else 0


def _cmd_pairwise(args) -> int:
    threads = _threads_from_env()
    folder = Path(args.dir)
    if not folder.is_dir():
        raise _InputError(f"{args.dir} is not a directory")
    files = sorted(p for p in folder.iterdir() if p.suffix == ".xyz")
    if len(files) < 2:
        raise _InputError("need at least two .xyz files")
    clouds = []
    for path in files:
        cloud = _read_cloud(str(path))
        centered = cloud.points - cloud.points.mean(axis=0)
        maxabs = float(np.abs(centered).max())
        if maxabs <= 0:
            raise _InputError(f"{path}: degenerate cloud")
        clouds.append(PointCloud(centered / maxabs))
    config = SearchConfig(epsilon=args.epsilon, allow_reflections=args.allow_reflections,
                          max_evals=_MAX_EVALS, threads=threads)
    outcome = pairwise_matrix(clouds, config)

    names = [p.name for p in files]
    lines = ["name," + ",".join(names)]
    for i, name in enumerate(names):
        row = [name] + [format_float(v) for v in outcome.matrix[i]]
        lines.append(",".join(row))
    atomic_write(f"{args.out_prefix}_matrix.csv", "\n".join(lines) + "\n")

    pairs = []
    incomplete = False
    for cell in sorted(outcome.cells, key=lambda c: (c.source, c.target)):
        doc = {"source": names[cell.source], "target": names[cell.target]}
        if cell.result is None:
            doc.update({"failed": True, "error": cell.error})
            incomplete = True
        else:
            incomplete = incomplete or not cell.result.completed
            doc.update({
                "failed": False,
                "ub": float(cell.result.ub),
                "lb": float(cell.result.lb),
                "certificate_valid": bool(cell.result.certificate_valid),
                "rotation_vec": [float(v) for v in cell.result.minimizer.rot],
                "translation": [float(v) for v in cell.result.minimizer.trans],
                "reflected": bool(cell.result.reflected),
            })
        pairs.append(doc)
    atomic_write(f"{args.out_prefix}_motions.json", dumps_json17({"pairs": pairs}) + "\n")
    return 2 if incomplete else 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except _InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (XYZFormatError, DegenerateCloudError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
