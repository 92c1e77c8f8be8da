"""Outer selection/coding loop with pluggable selection rules."""

from __future__ import annotations

import enum
import hashlib
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import coder
from .coder import CoderConfig, EncodingModel
from .dictio import Dictionary
from .numerics import as_dense, frobenius_norm
from .selection import SelectionState, project, select_1d, select_random, select_top_k


class SelectionMode(str, enum.Enum):
    JOINT = "joint"
    ONE_D = "1d"
    RANDOM = "random"


class FingerprintMismatch(ValueError):
    pass


class PipelineError(RuntimeError):
    def __init__(self, iteration: int, cause: Exception):
        super().__init__(f"outer iteration {iteration}: {cause}")
        self.iteration = iteration
        self.cause = cause


@dataclass(frozen=True)
class PipelineConfig:
    """Outer-loop settings.

    ``max_outer_iters=None`` means ``ceil((I + J) / k)``. ``k_left``/``k_right``
    drive the 1D and random modes. ``max_atoms`` stops the loop once
    ``|I_s| + |J_s|`` reaches it. ``seed`` feeds random selection only; the
    coder's initialization uses ``coder.seed``.
    """

    k_per_iter: int = 5
    rank: int = 3
    max_outer_iters: int | None = None
    residual_tol: float = 1e-4
    selection_mode: SelectionMode = SelectionMode.JOINT
    k_left: int = 0
    k_right: int = 0
    coder: CoderConfig = field(default_factory=CoderConfig)
    max_atoms: int | None = None
    warm_start: bool = True
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "selection_mode", SelectionMode(self.selection_mode))
        if self.k_per_iter < 1:
            raise ValueError("k_per_iter must be >= 1")
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if self.residual_tol < 0:
            raise ValueError("residual_tol must be >= 0")
        if self.k_left < 0 or self.k_right < 0:
            raise ValueError("k_left and k_right must be >= 0")
        if self.selection_mode is not SelectionMode.JOINT and self.k_left + self.k_right < 1:
            raise ValueError(f"{self.selection_mode.value} selection needs k_left + k_right >= 1")


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    n_left: int
    n_right: int
    residual_norm: float
    wall_time_s: float

    @property
    def n_atoms(self) -> int:
        return self.n_left + self.n_right


@dataclass
class PipelineTrace:
    fingerprint: str
    x_norm: float
    n_left_total: int
    n_right_total: int
    rows: list[TraceRow] = field(default_factory=list)
    stop_reason: str = ""

    @property
    def last(self) -> TraceRow:
        return self.rows[-1]

    def relative_residuals(self) -> np.ndarray:
        norms = np.array([r.residual_norm for r in self.rows])
        return norms / self.x_norm if self.x_norm > 0 else np.zeros_like(norms)


def fingerprint(x: np.ndarray, psi: Dictionary, phi: Dictionary) -> str:
    h = hashlib.sha256()
    for arr in (x, psi.atoms, phi.atoms):
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        h.update(str(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()


def default_max_outer_iters(psi: Dictionary, phi: Dictionary, k: int) -> int:
    return math.ceil((psi.n_atoms + phi.n_atoms) / k)


def _select(cfg: PipelineConfig, residual, psi_hat, phi_hat, state, iteration):
    mode = cfg.selection_mode
    if mode is SelectionMode.JOINT:
        return select_top_k(project(residual, psi_hat, phi_hat), state, cfg.k_per_iter)
    if mode is SelectionMode.ONE_D:
        return select_1d(residual, psi_hat, phi_hat, state, cfg.k_left, cfg.k_right)
    k_l = min(cfg.k_left, psi_hat.n_atoms - len(state.left))
    k_r = min(cfg.k_right, phi_hat.n_atoms - len(state.right))
    return select_random(state, psi_hat.n_atoms, phi_hat.n_atoms, k_l, k_r,
                         seed=[cfg.seed, iteration])


def _has_factors(model: EncodingModel) -> bool:
    return model.y.size > 0 and model.w.size > 0


def _loop(x, psi: Dictionary, phi: Dictionary, cfg: PipelineConfig,
          model: EncodingModel, trace: PipelineTrace, on_iteration):
    psi_hat, phi_hat = psi.normalized_copy(), phi.normalized_copy()
    state = model.selection.copy()
    if _has_factors(model):
        residual = x - coder.reconstruct(model, psi.sub(state.left), phi.sub(state.right))
    else:
        residual = x
    iteration = trace.last.iteration
    elapsed = trace.last.wall_time_s
    budget = cfg.max_outer_iters
    if budget is None:
        budget = default_max_outer_iters(psi, phi, cfg.k_per_iter)

    def finished() -> str:
        rel = trace.last.residual_norm / trace.x_norm if trace.x_norm > 0 else 0.0
        if rel < cfg.residual_tol:
            return "converged"
        if cfg.max_atoms is not None and state.n_atoms >= cfg.max_atoms:
            return "atom_budget"
        return ""

    trace.stop_reason = "max_outer_iters"
    for _ in range(budget):
        reason = finished()
        if reason:
            trace.stop_reason = reason
            break
        t0 = time.perf_counter()
        try:
            new_state = _select(cfg, residual, psi_hat, phi_hat, state, iteration + 1)
            if new_state.n_atoms == state.n_atoms:
                trace.stop_reason = "stalled"
                break
            psi_s, phi_s = psi.sub(new_state.left), phi.sub(new_state.right)
            init = model if (cfg.warm_start and _has_factors(model)) else None
            fitted = coder.fit(x, psi_s, phi_s, cfg.rank, cfg.coder, init=init)
        except Exception as exc:
            raise PipelineError(iteration + 1, exc) from exc
        model = coder.with_selection(fitted, new_state)
        state = new_state
        residual = x - coder.reconstruct_factors(psi_s, phi_s, model.y, model.w)
        elapsed += time.perf_counter() - t0
        iteration += 1
        trace.rows.append(TraceRow(iteration, len(state.left), len(state.right),
                                   frobenius_norm(residual), elapsed))
        if on_iteration is not None:
            on_iteration(iteration, model, residual)
    else:
        reason = finished()
        if reason:
            trace.stop_reason = reason
    return model, trace


def _check_inputs(x, psi: Dictionary, phi: Dictionary) -> np.ndarray:
    x = as_dense(x, "x")
    if psi.n_rows != x.shape[0] or phi.n_rows != x.shape[1]:
        raise ValueError(f"x is {x.shape} but dictionaries have {psi.n_rows} and {phi.n_rows} rows")
    return x


def run_lrmds(x, psi: Dictionary, phi: Dictionary, cfg: PipelineConfig | None = None,
              on_iteration=None) -> tuple[EncodingModel, PipelineTrace]:
    """Greedy sub-dictionary selection alternated with low-rank coding.

    Each outer iteration scores atom pairs against the current residual,
    grows the selection, refits ``Y, W`` on the full data ``x`` and
    recomputes the residual. ``on_iteration(iteration, model, residual)`` is
    called after every refit.
    """
    cfg = cfg or PipelineConfig()
    x = _check_inputs(x, psi, phi)
    x_norm = frobenius_norm(x)
    trace = PipelineTrace(fingerprint(x, psi, phi), x_norm, psi.n_atoms, phi.n_atoms,
                          [TraceRow(0, 0, 0, x_norm, 0.0)])
    return _loop(x, psi, phi, cfg, coder.empty_model(cfg.rank), trace, on_iteration)


def resume(x, psi: Dictionary, phi: Dictionary, cfg: PipelineConfig,
           prior: tuple[EncodingModel, PipelineTrace], on_iteration=None):
    """Continue a previous run for up to ``cfg.max_outer_iters`` more iterations."""
    x = _check_inputs(x, psi, phi)
    model, trace = prior
    if fingerprint(x, psi, phi) != trace.fingerprint:
        raise FingerprintMismatch("prior run was produced on different x/psi/phi")
    trace = replace(trace, rows=list(trace.rows))
    return _loop(x, psi, phi, cfg, model, trace, on_iteration)
