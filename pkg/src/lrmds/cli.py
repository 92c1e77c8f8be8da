"""Command-line interface.

Exit codes: 0 success, 1 computation failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, fields, replace
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import benchkit, dictio, synthlab
from .coder import CoderConfig
from .dictio import Dictionary, Family
from .matio import (ParseError, atomic_write_text, read_dense_csv, read_graph_mtx, read_json,
                    write_dense_csv, write_graph_mtx, write_json)
from .numerics import frobenius_norm
from .pipeline import PipelineConfig

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def config_schema() -> dict:
    text = resources.files("lrmds").joinpath("schemas/config.schema.json").read_text("utf-8")
    return json.loads(text)


def validate_config(doc) -> dict:
    try:
        jsonschema.validate(doc, config_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise UsageError(f"invalid config at {where}: {exc.message}") from None
    return doc


def load_config(path) -> tuple[dict, Path]:
    path = Path(path)
    try:
        doc = read_json(path)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from None
    return validate_config(doc), path.parent


def parse_snr(text) -> float:
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise UsageError(f"invalid SNR {text!r}") from None
    if not value > 0:
        raise UsageError("SNR must be positive (or inf)")
    return value


def _synth_spec(section: dict | None, overrides: dict | None = None) -> synthlab.SynthSpec:
    values = dict(section or {})
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    if "snr" in values:
        values["snr_db"] = parse_snr(values.pop("snr"))
    try:
        return synthlab.SynthSpec(**values)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid synthetic spec: {exc}") from None


def _spec_json(spec: synthlab.SynthSpec) -> dict:
    d = asdict(spec)
    d["snr"] = "inf" if math.isinf(d.pop("snr_db")) else spec.snr_db
    return d


def _build_side(specs: list[dict], graph, length: int | None) -> Dictionary:
    parts = []
    for s in specs:
        try:
            parts.append(dictio.build_from_params(s["family"], graph=graph, length=length,
                                                  max_period=s.get("max_period"),
                                                  knots=s.get("knots"), degree=s.get("degree", 3)))
        except ValueError as exc:
            raise UsageError(f"cannot build {s['family']} dictionary: {exc}") from None
    return dictio.stack(parts)


def _read_dictionary(path: Path) -> Dictionary:
    atoms = read_dense_csv(path)
    side = path.with_suffix(".json")
    if side.exists():
        meta = read_json(side)
        return Dictionary(atoms, meta.get("family", "custom"), bool(meta.get("normalized", False)),
                          meta.get("params", {}))
    return Dictionary(atoms, Family.CUSTOM, False, {})


def load_problem(config: dict, base_dir: Path, seed: int | None = None):
    """Resolve ``(x, psi, phi, info)`` from the ``data``/``dictionaries`` sections."""
    data = config.get("data")
    if not data:
        raise UsageError("config needs a data section")
    dicts = config.get("dictionaries", {})
    if "synth" in data:
        spec = _synth_spec(data["synth"], {"seed": seed})
        graph = synthlab.generate_sbm(spec)
        if dicts:
            psi = _build_side(dicts.get("left", [{"family": "gft"}]), graph, spec.signal_length)
            phi = _build_side(dicts.get("right", [{"family": "ramanujan",
                                                   "max_period": spec.max_period}]),
                              graph, spec.signal_length)
            psi, phi = psi.normalized_copy(), phi.normalized_copy()
        else:
            psi = dictio.build_gft(graph)
            phi = dictio.build_ramanujan(spec.signal_length, spec.max_period).normalized_copy()
        x, gt, clean = synthlab.generate_signal(spec, psi, phi)
        return x, psi, phi, {"synth": _spec_json(spec), "gt": {"left": gt.left, "right": gt.right}}
    if "x" not in data:
        raise UsageError("data section needs either x or synth")
    x = read_dense_csv(base_dir / data["x"])
    graph = read_graph_mtx(base_dir / data["graph"]) if "graph" in data else None
    sides = []
    for key, spec_key, length in (("psi", "left", x.shape[0]), ("phi", "right", x.shape[1])):
        if key in data:
            d = _read_dictionary(base_dir / data[key])
        elif spec_key in dicts:
            d = _build_side(dicts[spec_key], graph, length)
        else:
            raise UsageError(f"no {key} dictionary: give data.{key} or dictionaries.{spec_key}")
        sides.append(d.normalized_copy() if dicts.get("normalize") else d)
    return x, sides[0], sides[1], {"x": data["x"]}


PIPELINE_KEYS = {f.name for f in fields(PipelineConfig)} - {"coder", "selection_mode", "seed"}


def pipeline_config(section: dict | None, overrides: dict | None = None) -> PipelineConfig:
    section = dict(section or {})
    coder_kw = section.pop("coder", {}) or {}
    values = {k: v for k, v in section.items() if k in PIPELINE_KEYS}
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return PipelineConfig(coder=CoderConfig(**coder_kw), **values)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid method settings: {exc}") from None


def _resolved(cfg: PipelineConfig) -> dict:
    return json.loads(json.dumps(asdict(cfg)))


# commands


def cmd_dict_build(args) -> int:
    graph = None
    if args.family in ("gft", "haar"):
        if not args.graph:
            raise UsageError(f"--family {args.family} requires --graph")
        graph = read_graph_mtx(args.graph)
    elif args.length is None:
        raise UsageError(f"--family {args.family} requires --length")
    if args.family == "ramanujan" and args.max_period is None:
        raise UsageError("--family ramanujan requires --max-period")
    try:
        d = dictio.build_from_params(args.family, graph=graph, length=args.length,
                                     max_period=args.max_period, knots=args.knots,
                                     degree=args.degree)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.normalize:
        d = d.normalized_copy()
    out = Path(args.out)
    write_dense_csv(d.atoms, out)
    write_json(d.sidecar(), out.with_suffix(".json"))
    print(f"wrote {d.n_rows}x{d.n_atoms} {d.family.value} dictionary to {out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    section = {}
    if args.config:
        config, _ = load_config(args.config)
        section = config.get("data", {}).get("synth", {})
    spec = _synth_spec(section, {
        "n_nodes": args.n_nodes, "sbm_blocks": args.blocks, "p_in": args.p_in, "p_out": args.p_out,
        "gt_left_atoms": args.gt_left, "gt_right_atoms": args.gt_right, "rank": args.rank,
        "snr": args.snr, "seed": args.seed, "signal_length": args.length,
        "max_period": args.max_period})
    problem = synthlab.build_problem(spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_dense_csv(problem.x, out / "x.csv")
    write_dense_csv(problem.clean, out / "clean.csv")
    write_graph_mtx(problem.graph, out / "graph.mtx")
    write_dense_csv(problem.psi.atoms, out / "psi.csv")
    write_json(problem.psi.sidecar(), out / "psi.json")
    write_dense_csv(problem.phi.atoms, out / "phi.csv")
    write_json(problem.phi.sidecar(), out / "phi.json")
    noise = problem.noise
    snr = (float(np.sum(problem.clean ** 2) / np.sum(noise ** 2)) if np.any(noise) else "inf")
    write_json({"left": problem.gt.left, "right": problem.gt.right, "spec": _spec_json(spec),
                "empirical_snr": snr}, out / "gt.json")
    print(f"wrote synthetic problem {problem.x.shape} to {out}")
    return EXIT_OK


def _trace_csv(name, trace, size, seed) -> str:
    total = trace.n_left_total + trace.n_right_total
    recs = [benchkit.RunRecord(name, r.n_atoms, 100.0 * r.n_atoms / total,
                               r.residual_norm / math.sqrt(size), r.wall_time_s, r.iteration, seed)
            for r in trace.rows]
    return _records_text(recs)


def _records_text(recs) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(benchkit.CSV_HEADER)
    for r in recs:
        w.writerow(r.row())
    return buf.getvalue()


def cmd_run(args) -> int:
    config: dict = {}
    base_dir = Path(".")
    if args.config:
        config, base_dir = load_config(args.config)
    data = dict(config.get("data", {}))
    for key in ("x", "psi", "phi", "graph"):
        value = getattr(args, key)
        if value:
            data[key] = str(Path(value).resolve())
    config = {**config, "data": data}
    method_section = dict(config.get("method", {}))
    name = args.method or method_section.get("name")
    if name is None:
        raise UsageError("--method is required")
    cfg = pipeline_config(method_section, {
        "k_per_iter": args.k, "rank": args.rank, "max_atoms": args.max_atoms,
        "max_outer_iters": args.max_outer_iters, "residual_tol": args.residual_tol,
        "k_left": args.k_left, "k_right": args.k_right})
    sc_ratio = args.sc_ratio if args.sc_ratio is not None else method_section.get("sc_ratio", 0.5)
    omp_pairs = args.omp_pairs if args.omp_pairs is not None else method_section.get("omp_pairs")
    x, psi, phi, info = load_problem(config, base_dir, args.seed if "synth" in data else None)
    out = Path(args.out)
    summary_path = Path(args.summary) if args.summary else out.with_suffix(".json")
    resolved = {"method": name, "seed": args.seed, "pipeline": _resolved(cfg),
                "sc_ratio": sc_ratio, "omp_pairs": omp_pairs, "data": info}
    try:
        result = benchkit.run_method(name, x, psi, phi, cfg, seed=args.seed,
                                     max_atoms=cfg.max_atoms, sc_ratio=sc_ratio,
                                     omp_pairs=omp_pairs)
    except Exception as exc:
        err = benchkit.RunRecord(name, 0, 0.0, math.nan, math.nan, -1, args.seed,
                                 error=f"{type(exc).__name__}: {exc}")
        atomic_write_text(out, _records_text([err]))
        write_json({"config": resolved, "error": err.error}, summary_path)
        print(f"error: {err.error}", file=sys.stderr)
        return EXIT_FAILURE
    atomic_write_text(out, _trace_csv(name, result.trace, x.size, args.seed))
    last = result.trace.last
    x_norm = result.trace.x_norm
    rel = frobenius_norm(x - result.x_hat) / x_norm if x_norm > 0 else 0.0
    summary = {"config": resolved, "rmse": benchkit.rmse(x, result.x_hat),
               "relative_residual": rel, "atoms_selected": last.n_atoms,
               "left_atoms": last.n_left, "right_atoms": last.n_right,
               "atoms_pct": 100.0 * last.n_atoms / (psi.n_atoms + phi.n_atoms),
               "outer_iters": last.iteration, "wall_time_s": last.wall_time_s,
               "stop_reason": result.trace.stop_reason}
    write_json(summary, summary_path)
    print(f"{name}: rmse={summary['rmse']:.6g} relative_residual={rel:.3g} "
          f"atoms={last.n_atoms} time={last.wall_time_s:.3f}s ({result.trace.stop_reason})")
    return EXIT_OK


def cmd_bench(args) -> int:
    config, base_dir = load_config(args.config)
    bench = config.get("bench", {})
    method_section = config.get("method", {})
    names = method_section.get("names") or [method_section.get("name", "lrmds")]
    budgets = bench.get("budgets")
    if not budgets:
        raise UsageError("bench.budgets is required")
    seeds = bench.get("seeds", [0])
    out = args.out or bench.get("out")
    if not out:
        raise UsageError("give --out or bench.out")
    out = Path(out) if args.out else base_dir / out
    jobs = args.jobs or bench.get("jobs", 1)
    cfg = pipeline_config(method_section)
    x, psi, phi, info = load_problem(config, base_dir)
    records = benchkit.sweep(x, psi, phi, names, budgets, seeds, out, base=cfg, jobs=jobs,
                             omp_pairs=method_section.get("omp_pairs"))
    resolved = {**config, "pipeline": _resolved(cfg), "data_info": info}
    benchkit.write_summary(records, out.with_suffix(".json"), resolved)
    failed = [r for r in records if r.error]
    print(f"wrote {len(records)} records to {out} ({len(failed)} failed)")
    return EXIT_FAILURE if failed else EXIT_OK


def cmd_denoise(args) -> int:
    section: dict = {}
    if args.config:
        config, _ = load_config(args.config)
        section = dict(config.get("denoise", {}))
    k = args.k or section.pop("k_per_iter", 10)
    section.pop("k_per_iter", None)
    extra = args.extra_iters if args.extra_iters is not None else section.pop("extra_iters", 5)
    section.pop("extra_iters", None)
    omp_pairs = args.omp_pairs if args.omp_pairs is not None else section.pop("omp_pairs", None)
    section.pop("omp_pairs", None)
    if args.seed is not None:
        section["seed"] = args.seed
    try:
        spec = synthlab.DenoiseSpec(**section)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid denoise spec: {exc}") from None
    report = synthlab.run_denoise_experiment(spec, PipelineConfig(k_per_iter=k, rank=spec.rank),
                                             extra_iters=extra, omp_pairs=omp_pairs)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["atoms", "clean_rmse", "noisy_rmse", "gap_relative"])
    for a, c, n, g in zip(report.atoms, report.clean_rmse, report.noisy_rmse, report.curve_gaps):
        w.writerow([a, repr(c), repr(n), repr(float(g))])
    atomic_write_text(out / "curves.csv", buf.getvalue())
    summary = report.summary()
    summary["passed"] = report.curves_pass and report.histogram_pass
    write_json(summary, out / "summary.json")
    print(f"denoise: curves {'pass' if report.curves_pass else 'FAIL'}, "
          f"histogram {'pass' if report.histogram_pass else 'FAIL'}")
    return EXIT_OK


def _noise_point(args):
    n, m, seed, pairs, sigma, ortho_snr = args
    return synthlab.noise_coefficient_point(n, m, seed, pairs, sigma, ortho_snr)


def cmd_noisecoef(args) -> int:
    section: dict = {}
    if args.config:
        config, _ = load_config(args.config)
        section = config.get("noisecoef", {})
    n_grid = args.n_grid or section.get("n_grid", [250, 500, 1000, 2000])
    m = args.m or section.get("m", 1000)
    seeds = args.seeds or section.get("seeds", [0, 1, 2, 3, 4])
    pairs = args.target_pairs or section.get("target_pairs", 20)
    sigma = section.get("sigma", 1.0)
    ortho_snr = section.get("ortho_snr", 20.0)
    if any(b <= a for a, b in zip(n_grid, n_grid[1:])):
        raise UsageError("--n-grid must be strictly ascending")
    points = [(n, m, s, pairs, sigma, ortho_snr) for n in n_grid for s in seeds]
    jobs = args.jobs or 1
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            values = list(pool.map(_noise_point, points))
    else:
        values = [_noise_point(p) for p in points]
    grid = [values[i * len(seeds):(i + 1) * len(seeds)] for i in range(len(n_grid))]
    report = synthlab.NoiseCoefReport(list(n_grid), m, list(seeds), pairs, grid)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n", "seed", "max_coef"])
    for (n, _, s, *_), v in zip(points, values):
        w.writerow([n, s, repr(v)])
    atomic_write_text(out / "noisecoef.csv", buf.getvalue())
    write_json(report.summary(), out / "summary.json")
    print("noisecoef: medians " + ", ".join(f"N={n}: {v:.4g}" for n, v in zip(n_grid, report.medians))
          + f"; decreasing={report.decreasing}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lrmds", description="Low-rank multi-dictionary selection")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("dict-build", help="build an analytical dictionary")
    d.add_argument("--family", required=True, choices=["gft", "haar", "ramanujan", "spline"])
    d.add_argument("--graph", help="Matrix Market adjacency (gft, haar)")
    d.add_argument("--length", type=int, help="signal length (ramanujan, spline)")
    d.add_argument("--max-period", type=int)
    d.add_argument("--knots", type=int, nargs="+", help="basis functions per scale (spline)")
    d.add_argument("--degree", type=int, default=3)
    d.add_argument("--normalize", action="store_true", help="scale atoms to unit norm")
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_dict_build)

    s = sub.add_parser("synth", help="generate a synthetic problem")
    s.add_argument("--config")
    s.add_argument("--n-nodes", type=int)
    s.add_argument("--blocks", type=int)
    s.add_argument("--p-in", type=float)
    s.add_argument("--p-out", type=float)
    s.add_argument("--gt-left", type=int)
    s.add_argument("--gt-right", type=int)
    s.add_argument("--rank", type=int)
    s.add_argument("--snr", help="linear power ratio, or inf for no noise")
    s.add_argument("--seed", type=int)
    s.add_argument("--length", type=int, help="signal length (Ramanujan rows)")
    s.add_argument("--max-period", type=int)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_synth)

    r = sub.add_parser("run", help="run one method")
    r.add_argument("--method", choices=list(benchkit.METHODS))
    r.add_argument("--config")
    r.add_argument("--x")
    r.add_argument("--psi")
    r.add_argument("--phi")
    r.add_argument("--graph")
    r.add_argument("--k", type=int)
    r.add_argument("--rank", type=int)
    r.add_argument("--max-atoms", type=int)
    r.add_argument("--max-outer-iters", type=int)
    r.add_argument("--residual-tol", type=float)
    r.add_argument("--k-left", type=int)
    r.add_argument("--k-right", type=int)
    r.add_argument("--sc-ratio", type=float)
    r.add_argument("--omp-pairs", type=int)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", required=True, help="trace CSV")
    r.add_argument("--summary", help="summary JSON (default: --out with .json)")
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("bench", help="sweep methods over atom budgets")
    b.add_argument("--config", required=True)
    b.add_argument("--out")
    b.add_argument("--jobs", type=int)
    b.set_defaults(func=cmd_bench)

    n = sub.add_parser("denoise", help="clean vs noisy denoising experiment")
    n.add_argument("--config")
    n.add_argument("--seed", type=int)
    n.add_argument("--k", type=int)
    n.add_argument("--extra-iters", type=int)
    n.add_argument("--omp-pairs", type=int)
    n.add_argument("--out-dir", required=True)
    n.set_defaults(func=cmd_denoise)

    c = sub.add_parser("noisecoef", help="max noise coefficient versus N")
    c.add_argument("--config")
    c.add_argument("--n-grid", type=int, nargs="+")
    c.add_argument("--m", type=int)
    c.add_argument("--seeds", type=int, nargs="+")
    c.add_argument("--target-pairs", type=int)
    c.add_argument("--jobs", type=int)
    c.add_argument("--out-dir", required=True)
    c.set_defaults(func=cmd_noisecoef)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    seed = getattr(args, "seed", None)
    if seed is not None and seed < 0:
        print("error: --seed must be non-negative", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, ParseError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # computation failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
