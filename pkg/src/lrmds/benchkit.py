"""Metrics, method runners and budget sweeps with CSV/JSON output."""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import coder
from .baselines import run_omp2d, run_sc_als
from .coder import Variant
from .dictio import Dictionary
from .matio import atomic_write_text, write_json
from .numerics import as_dense, derive_seed, frobenius_norm
from .pipeline import PipelineConfig, PipelineTrace, SelectionMode, resume, run_lrmds
from .selection import project

CSV_HEADER = ("method", "atoms_selected", "atoms_pct", "rmse", "wall_time_s", "outer_iter", "seed")
METHODS = ("lrmds", "lrmds-f", "lrmds-1d", "rand", "omp2d", "sc-als")
LRMDS_FAMILY = ("lrmds", "lrmds-f", "lrmds-1d", "rand")
# screening ratios searched when matching SC-ALS to an atom budget
SC_RATIOS = tuple(round(0.1 + 0.01 * i, 2) for i in range(81))


@dataclass
class RunRecord:
    method: str
    atoms_selected: int
    atoms_pct: float
    rmse: float
    wall_time_s: float
    outer_iter: int
    seed: int
    error: str = ""

    def row(self) -> list:
        return [self.method, self.atoms_selected, repr(float(self.atoms_pct)),
                repr(float(self.rmse)), repr(float(self.wall_time_s)), self.outer_iter, self.seed]


def rmse(x, x_hat) -> float:
    x, x_hat = np.asarray(x, dtype=np.float64), np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {x_hat.shape}")
    if x.size == 0:
        return 0.0
    return float(np.sqrt(np.mean((x - x_hat) ** 2)))


def explained_pct(x, x_hat) -> float:
    """``100 (1 - ||x - x_hat||_F / ||x||_F)``."""
    x, x_hat = np.asarray(x, dtype=np.float64), np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {x_hat.shape}")
    norm = frobenius_norm(x)
    if norm == 0.0:
        raise ValueError("explained percentage is undefined for a zero matrix")
    return 100.0 * (1.0 - frobenius_norm(x - x_hat) / norm)


def budget_atoms(pct: float, total: int) -> int:
    """Atom count for a percentage of ``I + J`` (rounded up, at least 1)."""
    if not 0 < pct <= 100:
        raise ValueError(f"budget percentage {pct} outside (0, 100]")
    return max(1, math.ceil(pct / 100.0 * total - 1e-9))


def method_config(name: str, base: PipelineConfig | None = None, seed: int = 0) -> PipelineConfig:
    """Pipeline settings for one of the LRMDS-family methods.

    Selection and coder initialization get independent seeds derived from
    ``seed``. The 1D and random variants split ``k_per_iter`` evenly between
    sides unless ``k_left``/``k_right`` are already set.
    """
    base = base or PipelineConfig()
    if name not in LRMDS_FAMILY:
        raise ValueError(f"{name!r} is not an LRMDS-family method")
    variant = Variant.FAST if name == "lrmds-f" else Variant.EXACT
    cfg = replace(base, seed=derive_seed(seed, "selection"),
                  coder=replace(base.coder, variant=variant, seed=derive_seed(seed, "init")))
    if name in ("lrmds", "lrmds-f"):
        return replace(cfg, selection_mode=SelectionMode.JOINT)
    mode = SelectionMode.ONE_D if name == "lrmds-1d" else SelectionMode.RANDOM
    k_l, k_r = cfg.k_left, cfg.k_right
    if k_l + k_r == 0:
        k_l, k_r = math.ceil(cfg.k_per_iter / 2), cfg.k_per_iter // 2
    return replace(cfg, selection_mode=mode, k_left=k_l, k_right=k_r)


@dataclass
class MethodResult:
    x_hat: np.ndarray
    trace: PipelineTrace
    model: object


def run_method(name: str, x, psi: Dictionary, phi: Dictionary, base: PipelineConfig | None = None,
               seed: int = 0, max_atoms: int | None = None, sc_ratio: float = 0.5,
               omp_pairs: int | None = None) -> MethodResult:
    """Run any supported method once and return its reconstruction and trace."""
    base = base or PipelineConfig()
    x = as_dense(x, "x")
    if name in LRMDS_FAMILY:
        cfg = replace(method_config(name, base, seed), max_atoms=max_atoms)
        model, trace = run_lrmds(x, psi, phi, cfg)
        return MethodResult(_lrmds_recon(model, psi, phi), trace, model)
    if name == "omp2d":
        pairs = omp_pairs if omp_pairs is not None else psi.n_atoms * phi.n_atoms
        model, trace = run_omp2d(x, psi, phi, pairs, max_atoms=max_atoms)
        return MethodResult(model.reconstruct(psi, phi), trace, model)
    if name == "sc-als":
        model, trace = run_sc_als(x, psi, phi, sc_ratio, base.coder, base.rank)
        return MethodResult(_lrmds_recon(model, psi, phi), trace, model)
    raise ValueError(f"unknown method {name!r}; choose from {', '.join(METHODS)}")


def _lrmds_recon(model, psi: Dictionary, phi: Dictionary) -> np.ndarray:
    sel = model.selection
    if not sel.left or not sel.right:
        return np.zeros((psi.n_rows, phi.n_rows))
    return coder.reconstruct(model, psi.sub(sel.left), phi.sub(sel.right))


def _record(name, trace: PipelineTrace, x, x_hat, seed) -> RunRecord:
    last = trace.last
    total = trace.n_left_total + trace.n_right_total
    return RunRecord(name, last.n_atoms, 100.0 * last.n_atoms / total, rmse(x, x_hat),
                     last.wall_time_s, last.iteration, seed)


def _error(name, seed, budget_pct, exc) -> RunRecord:
    return RunRecord(name, 0, float(budget_pct), math.nan, math.nan, -1, seed,
                     error=f"{type(exc).__name__}: {exc}")


def _sweep_lrmds(name, x, psi, phi, base, budgets, seed):
    cfg = method_config(name, base, seed)
    total = psi.n_atoms + phi.n_atoms
    out, prior = [], None
    for pct in budgets:
        try:
            step = replace(cfg, max_atoms=budget_atoms(pct, total))
            if prior is None:
                prior = run_lrmds(x, psi, phi, step)
            else:
                prior = resume(x, psi, phi, step, prior)
        except Exception as exc:  # recorded, sweep continues
            out.append(_error(name, seed, pct, exc))
            break
        rec = _record(name, prior[1], x, _lrmds_recon(prior[0], psi, phi), seed)
        if not out or rec.outer_iter > out[-1].outer_iter:
            out.append(rec)
    return out


def _sweep_omp(x, psi, phi, budgets, seed, omp_pairs):
    total = psi.n_atoms + phi.n_atoms
    pairs = omp_pairs if omp_pairs is not None else psi.n_atoms * phi.n_atoms
    try:
        _, trace = run_omp2d(x, psi, phi, pairs, max_atoms=budget_atoms(budgets[-1], total))
    except Exception as exc:
        return [_error("omp2d", seed, budgets[0], exc)]
    size = math.sqrt(x.size)
    out = []
    for pct in budgets:
        want = budget_atoms(pct, total)
        row = next((r for r in trace.rows if r.n_atoms >= want), trace.rows[-1])
        if out and row.iteration <= out[-1].outer_iter:
            continue
        out.append(RunRecord("omp2d", row.n_atoms, 100.0 * row.n_atoms / total,
                             row.residual_norm / size, row.wall_time_s, row.iteration, seed))
    return out


def sc_ratio_for_budget(x, psi: Dictionary, phi: Dictionary, atoms: int,
                        ratios=SC_RATIOS) -> float:
    """Largest screening ratio whose surviving atom count is at least ``atoms``."""
    mag = np.abs(project(x, psi.normalized_copy(), phi.normalized_copy()))
    lam_max = mag.max()
    row_max, col_max = mag.max(axis=1), mag.max(axis=0)
    best = min(ratios)
    for ratio in sorted(ratios):
        lam = ratio * lam_max
        if np.count_nonzero(row_max >= lam) + np.count_nonzero(col_max >= lam) >= atoms:
            best = ratio
    return best


def _sweep_sc(x, psi, phi, base, budgets, seed):
    total = psi.n_atoms + phi.n_atoms
    out = []
    for pct in budgets:
        try:
            ratio = sc_ratio_for_budget(x, psi, phi, budget_atoms(pct, total))
            cfg = method_config("lrmds", base, seed)
            model, trace = run_sc_als(x, psi, phi, ratio, cfg.coder, cfg.rank)
        except Exception as exc:
            out.append(_error("sc-als", seed, pct, exc))
            continue
        out.append(_record("sc-als", trace, x, _lrmds_recon(model, psi, phi), seed))
    return out


def _cell(args):
    name, x, psi, phi, base, budgets, seed, omp_pairs = args
    if name in LRMDS_FAMILY:
        return _sweep_lrmds(name, x, psi, phi, base, budgets, seed)
    if name == "omp2d":
        return _sweep_omp(x, psi, phi, budgets, seed, omp_pairs)
    return _sweep_sc(x, psi, phi, base, budgets, seed)


def sweep(x, psi: Dictionary, phi: Dictionary, methods, atom_budgets, seeds, out_path=None,
          base: PipelineConfig | None = None, jobs: int = 1,
          omp_pairs: int | None = None) -> list[RunRecord]:
    """Run every method and seed up to each atom budget (percent of ``I + J``).

    LRMDS-family methods are resumed from one budget to the next, so each
    record's wall time is cumulative. 2D-OMP runs once to the largest budget
    and is read off its trace. SC-ALS is refit per budget with the screening
    ratio that first keeps at least the budgeted atoms. A budget that adds no
    iteration over the previous one is skipped. Failures become error rows
    (``rmse`` and ``wall_time_s`` are NaN) and the sweep continues.
    """
    x = as_dense(x, "x")
    budgets = [float(b) for b in atom_budgets]
    if not budgets:
        raise ValueError("at least one budget is required")
    if any(b2 < b1 for b1, b2 in zip(budgets, budgets[1:])):
        raise ValueError("budgets must be ascending")
    for b in budgets:
        budget_atoms(b, psi.n_atoms + phi.n_atoms)
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ValueError(f"unknown methods {unknown}; choose from {', '.join(METHODS)}")
    base = base or PipelineConfig()
    cells = [(m, x, psi, phi, base, budgets, int(s), omp_pairs) for m in methods for s in seeds]
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_cell, cells))
    else:
        chunks = [_cell(c) for c in cells]
    records = [r for chunk in chunks for r in chunk]
    if out_path is not None:
        write_records_csv(records, out_path)
    return records


def write_records_csv(records, path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in records:
        w.writerow(r.row())
    atomic_write_text(Path(path), buf.getvalue())


def read_records_csv(path) -> list[RunRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_HEADER:
            raise ValueError(f"unexpected CSV header {reader.fieldnames}")
        return [RunRecord(r["method"], int(r["atoms_selected"]), float(r["atoms_pct"]),
                          float(r["rmse"]), float(r["wall_time_s"]), int(r["outer_iter"]),
                          int(r["seed"])) for r in reader]


def summarize(records) -> dict:
    """Per-method aggregates: final-row medians and error counts."""
    out: dict = {}
    for name in dict.fromkeys(r.method for r in records):
        rows = [r for r in records if r.method == name]
        ok = [r for r in rows if not r.error]
        finals: dict[int, RunRecord] = {}
        for r in ok:
            finals[r.seed] = r
        entry = {"records": len(rows), "errors": [r.error for r in rows if r.error]}
        if finals:
            f = list(finals.values())
            entry.update(
                median_final_rmse=float(np.median([r.rmse for r in f])),
                median_final_atoms_pct=float(np.median([r.atoms_pct for r in f])),
                median_total_time_s=float(np.median([r.wall_time_s for r in f])),
            )
        out[name] = entry
    return out


def _json_safe(d: dict) -> dict:
    return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in d.items()}


def write_summary(records, path, config: dict | None = None, extra: dict | None = None) -> dict:
    doc = {"config": config or {}, "methods": summarize(records),
           "records": [_json_safe(asdict(r)) for r in records], **(extra or {})}
    write_json(doc, path)
    return doc
