"""Command-line entry point: `conga simulate|fit|evaluate|bench`.

Every command is deterministic given (config, seed); rerunning a command
produces byte-identical CSV and PGM outputs. Exit codes: 0 success,
2 config error, 3 data error, 4 solver non-convergence.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__, evaluate, graphs, signals, solver

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_SOLVER = 4

SEED_ENV_VAR = "CONGA_SEED"


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


# ---------------------------------------------------------------------------
# Config handling


def bundled_config_path(name):
    ref = resources.files("conga") / "configs" / name
    if not ref.is_file():
        raise ConfigError(f"no bundled config named {name!r}")
    return ref


def load_config(path):
    """Parse a TOML run config; falls back to the bundled configs by name."""
    p = Path(path)
    if p.is_file():
        raw = p.read_bytes()
    else:
        raw = bundled_config_path(p.name).read_bytes()
    try:
        doc = tomllib.loads(raw.decode())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML: {exc}") from exc

    sim = doc.get("simulation")
    if sim is None:
        raise ConfigError(f"{path}: missing [simulation] table")
    seed = int(os.environ.get(SEED_ENV_VAR, sim.get("seed", 0)))
    try:
        sim_cfg = signals.SimulationConfig(
            sizes1=tuple(sim["sizes1"]),
            sizes2=tuple(sim["sizes2"]),
            p_intra=float(sim["p_intra"]),
            q_inter=float(sim["q_inter"]),
            m=int(sim["m"]),
            s=float(sim["s"]),
            energy=float(sim["energy"]),
            sigma=float(sim["sigma"]),
            seed=seed,
            rng=sim.get("rng", graphs.RNG_ALGORITHM),
        )
    except KeyError as exc:
        raise ConfigError(f"{path}: [simulation] missing field {exc}") from exc
    except Exception as exc:
        raise ConfigError(f"{path}: [simulation] invalid: {exc}") from exc
    if sim_cfg.rng != graphs.RNG_ALGORITHM:
        raise ConfigError(
            f"{path}: rng must be {graphs.RNG_ALGORITHM!r} (got {sim_cfg.rng!r})"
        )

    sol = doc.get("solver", {})
    bench = doc.get("bench", {})
    return {"simulation": sim_cfg, "solver": sol, "bench": bench, "raw": doc}


def solver_defaults(sol):
    return solver.SolverConfig(
        n_components=int(sol.get("n_components", 4)),
        inner_tol=float(sol.get("inner_tol", 1e-9)),
        outer_tol=float(sol.get("outer_tol", 1e-7)),
        max_inner=int(sol.get("max_inner", 5000)),
        max_outer=int(sol.get("max_outer", 500)),
        madmm_rho=float(sol.get("madmm_rho", 1.0)),
    )


# ---------------------------------------------------------------------------
# Deterministic world construction


def simulate_pair(cfg: signals.SimulationConfig):
    """Build both SBM graphs and the paired signals from one base seed.

    The base seed is split into independent streams (graph 1, graph 2,
    signals) with numpy's SeedSequence, each driving a Philox generator.
    """
    ss = np.random.SeedSequence(cfg.seed)
    s_g1, s_g2, s_sig = ss.spawn(3)
    g1, mem1 = graphs.sbm_generate(cfg.sizes1, cfg.p_intra, cfg.q_inter, s_g1)
    g2, mem2 = graphs.sbm_generate(cfg.sizes2, cfg.p_intra, cfg.q_inter, s_g2)
    dataset = signals.generate_paired_signals(mem1, mem2, cfg, rng=graphs.make_rng(s_sig))
    return g1, mem1, g2, mem2, dataset


# ---------------------------------------------------------------------------
# Output helpers


def write_pgm(path, M):
    """8-bit P5 heatmap, one pixel per entry, |entry| scaled linearly to 0..255."""
    M = np.abs(np.asarray(M, dtype=float))
    peak = M.max(initial=0.0)
    pixels = np.zeros(M.shape, dtype=np.uint8)
    if peak > 0:
        pixels = np.minimum(np.rint(255.0 * M / peak), 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{M.shape[1]} {M.shape[0]}\n255\n".encode())
        fh.write(pixels.tobytes())


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(outdir, cfg: signals.SimulationConfig, extra, started, outputs):
    manifest = {
        "tool": "conga",
        "version": __version__,
        "rng_algorithm": cfg.rng,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "wall_time_seconds": time.perf_counter() - started,
        "outputs": {Path(p).name: _sha256(p) for p in outputs},
    }
    manifest.update(extra)
    path = Path(outdir) / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    raise TypeError(f"not JSON serializable: {type(o)}")


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args):
    cfg = load_config(args.config)["simulation"]
    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()

    g1, mem1, g2, mem2, dataset = simulate_pair(cfg)
    outputs = []

    def emit(name, writer, obj):
        path = outdir / name
        writer(path, obj)
        outputs.append(path)

    emit("graph1.edges", graphs.write_edge_list, g1)
    emit("graph2.edges", graphs.write_edge_list, g2)
    emit("membership1.csv", graphs.write_membership, mem1)
    emit("membership2.csv", graphs.write_membership, mem2)
    emit("x1.csv", signals.write_matrix_csv, dataset.x1)
    emit("x2.csv", signals.write_matrix_csv, dataset.x2)
    emit("x1.bin", signals.write_matrix_binary, dataset.x1)
    emit("x2.bin", signals.write_matrix_binary, dataset.x2)

    write_manifest(outdir, cfg, {"command": "simulate",
                                 "snr": signals.snr_summary(cfg)},
                   started, outputs)
    return 0


# ---------------------------------------------------------------------------
# fit


def _load_dataset_dir(datadir):
    datadir = Path(datadir)
    mats = []
    for stem in ("x1", "x2"):
        binary = datadir / f"{stem}.bin"
        csv = datadir / f"{stem}.csv"
        if binary.is_file():
            mats.append(signals.read_matrix_binary(binary))
        elif csv.is_file():
            mats.append(signals.read_matrix_csv(csv))
        else:
            raise DataError(f"missing signal file {stem}.bin / {stem}.csv in {datadir}")
    g = []
    for name in ("graph1.edges", "graph2.edges"):
        path = datadir / name
        if not path.is_file():
            raise DataError(f"missing graph file {path}")
        g.append(graphs.read_edge_list(path))
    x1, x2 = mats
    g1, g2 = g
    if x1.shape[1] != g1.n or x2.shape[1] != g2.n:
        raise DataError(
            f"signal/graph shape mismatch: signals have {x1.shape[1]}/{x2.shape[1]} "
            f"nodes, graphs have {g1.n}/{g2.n}"
        )
    if x1.shape[0] != x2.shape[0]:
        raise DataError("x1 and x2 sample counts differ")
    return g1, g2, signals.SignalDataset(x1=x1, x2=x2)


def _penalty(lam):
    return solver.l1_penalty(lam) if lam > 0 else solver.no_penalty()


def write_fit(outdir, fit, cfg, algorithm, wall_time):
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    signals.write_matrix_csv(outdir / "U.csv", fit.u_hat)
    signals.write_matrix_csv(outdir / "V.csv", fit.v_hat)
    diag = {
        "algorithm": algorithm,
        "objective_trace": fit.objective_trace,
        "s_norms_u": fit.s_norms_u,
        "s_norms_v": fit.s_norms_v,
        "converged": fit.converged,
        "component_values": fit.component_values,
        "warnings": fit.warnings,
        "inner_monotone_violation": fit.inner_monotone_violation,
        "config": {
            "n_components": cfg.n_components,
            "lambda1": cfg.penalty1.weight,
            "lambda2": cfg.penalty2.weight,
            "alpha1": cfg.alpha1,
            "alpha2": cfg.alpha2,
            "inner_tol": cfg.inner_tol,
            "outer_tol": cfg.outer_tol,
            "max_inner": cfg.max_inner,
            "max_outer": cfg.max_outer,
            "madmm_rho": cfg.madmm_rho,
        },
        "wall_time_seconds": wall_time,
    }
    (outdir / "fit.json").write_text(
        json.dumps(diag, indent=2, sort_keys=True, default=_json_default) + "\n"
    )


def cmd_fit(args):
    g1, g2, dataset = _load_dataset_dir(args.data)
    cfg = solver.SolverConfig(
        n_components=args.k,
        penalty1=_penalty(args.lambda1),
        penalty2=_penalty(args.lambda2),
        alpha1=args.alpha1,
        alpha2=args.alpha2,
    )
    S1 = graphs.smoothing_operator(graphs.normalized_laplacian(g1), cfg.alpha1)
    S2 = graphs.smoothing_operator(graphs.normalized_laplacian(g2), cfg.alpha2)
    C = signals.cross_product(dataset)
    started = time.perf_counter()
    if args.algorithm == "greedy":
        fit = solver.sgpls_greedy(C, S1, S2, cfg)
    else:
        fit = solver.sgpls_multirank(C, S1, S2, cfg)
    write_fit(args.output, fit, cfg, args.algorithm, time.perf_counter() - started)
    return 0


# ---------------------------------------------------------------------------
# evaluate


def cmd_evaluate(args):
    fitdir = Path(args.fit)
    truthdir = Path(args.truth)
    for name in ("U.csv", "V.csv"):
        if not (fitdir / name).is_file():
            raise DataError(f"missing factor file {fitdir / name}")
    U = signals.read_matrix_csv(fitdir / "U.csv")
    V = signals.read_matrix_csv(fitdir / "V.csv")
    truth1 = graphs.read_membership(truthdir / "membership1.csv")
    truth2 = graphs.read_membership(truthdir / "membership2.csv")
    k = max(truth1.n_communities, truth2.n_communities)
    truth1 = graphs.Membership(truth1.assignment, k)
    truth2 = graphs.Membership(truth2.assignment, k)
    if U.shape[1] != V.shape[1]:
        raise DataError("U and V component counts differ")
    if U.shape[1] > k:
        raise DataError(
            f"factor component count {U.shape[1]} exceeds ground-truth "
            f"community count {k}"
        )
    if U.shape[0] != truth1.assignment.size or V.shape[0] != truth2.assignment.size:
        raise DataError("factor row counts do not match membership node counts")

    est1 = evaluate.extract_membership(U, source="U")
    est2 = evaluate.extract_membership(V, source="V")
    scores = evaluate.match_and_score(est1, est2, truth1, truth2)
    out = scores.to_dict()
    out["empty"] = scores.empty1 or scores.empty2
    path = Path(args.output)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    return 0


# ---------------------------------------------------------------------------
# bench


def bench_one_seed(sim_cfg, sol, seed, algorithm="greedy"):
    """Full four-variant oracle-tuned comparison for one seed."""
    cfg = signals.SimulationConfig(**{**sim_cfg.to_dict(), "seed": seed})
    g1, mem1, g2, mem2, dataset = simulate_pair(cfg)
    lap1 = graphs.normalized_laplacian(g1)
    lap2 = graphs.normalized_laplacian(g2)
    C = signals.cross_product(dataset)
    grids = evaluate.default_grids(
        C,
        int(sol.get("n_components", 4)),
        n_lambda=int(sol.get("n_lambda", 5)),
        n_alpha=int(sol.get("n_alpha", 5)),
    )
    report = evaluate.run_variant_comparison(
        dataset, mem1, mem2, lap1, lap2, grids, algorithm=algorithm
    )
    return seed, report


def _bench_worker(payload):
    sim_cfg, sol, seed, algorithm = payload
    return bench_one_seed(sim_cfg, sol, seed, algorithm)


def run_benchmark(sim_cfg, sol, bench, algorithm="greedy", jobs=1):
    """Median-over-seeds comparison of the four PLS variants."""
    n_seeds = int(bench.get("n_seeds", 10))
    sol = dict(sol)
    sol.setdefault("n_lambda", bench.get("n_lambda", 5))
    sol.setdefault("n_alpha", bench.get("n_alpha", 5))
    seeds = [sim_cfg.seed + i for i in range(n_seeds)]
    payloads = [(sim_cfg, sol, seed, algorithm) for seed in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_bench_worker, payloads))
    else:
        results = [_bench_worker(p) for p in payloads]
    results.sort(key=lambda r: seeds.index(r[0]))

    per_seed = {seed: report for seed, report in results}
    medians = {}
    for variant in evaluate.VARIANTS:
        rows = [per_seed[s].rows[variant] for s in seeds]
        medians[variant] = {
            "accuracy1": float(np.median([r["accuracy1"] for r in rows])),
            "accuracy2": float(np.median([r["accuracy2"] for r in rows])),
            "alignment_accuracy": float(
                np.median([r["alignment_accuracy"] for r in rows])
            ),
        }
    violation = max(
        per_seed[s].max_inner_monotone_violation for s in seeds
    )
    return seeds, per_seed, medians, violation


def _report_csv_lines(seeds, per_seed):
    header = (
        "seed,variant,lambda1,alpha1,accuracy1,accuracy2,alignment_accuracy,"
        "support1,support2,objective"
    )
    lines = [header]
    for seed in seeds:
        for variant in evaluate.VARIANTS:
            r = per_seed[seed].rows[variant]
            lines.append(
                f"{seed},{variant},"
                f"{format(r['lambda1'], '.17g')},{format(r['alpha1'], '.17g')},"
                f"{format(r['accuracy1'], '.17g')},{format(r['accuracy2'], '.17g')},"
                f"{format(r['alignment_accuracy'], '.17g')},"
                f"{r['support_sizes'][0]},{r['support_sizes'][1]},"
                f"{format(r['objective'], '.17g')}"
            )
    return lines


def cmd_bench(args):
    doc = load_config(args.config)
    sim_cfg = doc["simulation"]
    sol = doc["solver"]
    bench = doc["bench"]
    algorithm = args.algorithm or sol.get("algorithm", "greedy")
    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()

    seeds, per_seed, medians, violation = run_benchmark(
        sim_cfg, sol, bench, algorithm=algorithm, jobs=args.jobs
    )

    outputs = []
    report = {
        "variants": list(evaluate.VARIANTS),
        "seeds": seeds,
        "median": medians,
        "per_seed": {
            str(s): {v: _strip_runtime(per_seed[s].rows[v]) for v in evaluate.VARIANTS}
            for s in seeds
        },
        "max_inner_monotone_violation": violation,
        "algorithm": algorithm,
    }
    report_json = outdir / "report.json"
    report_json.write_text(
        json.dumps(report, indent=2, sort_keys=True, default=_json_default) + "\n"
    )
    outputs.append(report_json)

    report_csv = outdir / "report.csv"
    report_csv.write_text("\n".join(_report_csv_lines(seeds, per_seed)) + "\n")
    outputs.append(report_csv)

    first = per_seed[seeds[0]]
    for variant in evaluate.VARIANTS:
        U, V = first.factors[variant]
        for name, F in (("g1", U), ("g2", V)):
            path = outdir / f"heatmap_{variant}_{name}.pgm"
            write_pgm(path, F)
            outputs.append(path)

    write_manifest(outdir, sim_cfg, {"command": "bench", "n_seeds": len(seeds)},
                   started, outputs)
    return 0


def _strip_runtime(row):
    # runtimes are not deterministic; keep them out of report.json
    return {k: v for k, v in row.items() if k != "runtime"}


# ---------------------------------------------------------------------------
# entry point


def build_parser():
    parser = argparse.ArgumentParser(
        prog="conga",
        description="Coarse graph alignment from paired graph signals.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate graphs, memberships, and signals")
    p.add_argument("--config", required=True)
    p.add_argument("--output", "-o", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit SGPLS factors to a simulated dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--output", "-o", required=True)
    p.add_argument("--algorithm", choices=("greedy", "multirank"), default="greedy")
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--lambda1", type=float, default=0.0)
    p.add_argument("--lambda2", type=float, default=0.0)
    p.add_argument("--alpha1", type=float, default=0.0)
    p.add_argument("--alpha2", type=float, default=0.0)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("evaluate", help="score fitted factors against ground truth")
    p.add_argument("--fit", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--output", "-o", default="scores.json")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bench", help="four-variant oracle-tuned comparison")
    p.add_argument("--config", required=True)
    p.add_argument("--output", "-o", required=True)
    p.add_argument("--algorithm", choices=("greedy", "multirank"), default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, signals.DataFormatError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except solver.SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
