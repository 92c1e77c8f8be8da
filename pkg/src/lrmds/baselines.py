"""Competing coders: 2D orthogonal matching pursuit and screening + ALS."""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from . import coder
from .coder import CoderConfig, EncodingModel
from .dictio import Dictionary
from .numerics import as_dense, column_norms, frobenius_norm, pseudo_inverse
from .pipeline import PipelineTrace, TraceRow, fingerprint
from .selection import project, screen


class SingularGramWarning(RuntimeWarning):
    pass


@dataclass
class Omp2dModel:
    """Selected 2D atoms ``(i, j)`` in selection order and their coefficients."""

    pairs: list[tuple[int, int]] = field(default_factory=list)
    coeffs: np.ndarray = field(default_factory=lambda: np.zeros(0))
    singular: bool = False

    def __post_init__(self):
        self.pairs = [(int(i), int(j)) for i, j in self.pairs]
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        if len(set(self.pairs)) != len(self.pairs):
            raise ValueError("pairs must be unique")
        if self.coeffs.shape != (len(self.pairs),):
            raise ValueError("one coefficient per pair is required")

    @property
    def left_atoms(self) -> list[int]:
        return sorted({i for i, _ in self.pairs})

    @property
    def right_atoms(self) -> list[int]:
        return sorted({j for _, j in self.pairs})

    def full_coefficients(self, n_left: int, n_right: int) -> np.ndarray:
        z = np.zeros((n_left, n_right))
        for (i, j), c in zip(self.pairs, self.coeffs):
            z[i, j] = c
        return z

    def reconstruct(self, psi: Dictionary, phi: Dictionary) -> np.ndarray:
        z = self.full_coefficients(psi.n_atoms, phi.n_atoms)
        li, rj = self.left_atoms, self.right_atoms
        if not li:
            return np.zeros((psi.n_rows, phi.n_rows))
        return (psi.sub(li) @ z[np.ix_(li, rj)]) @ phi.sub(rj).T


def pair_gram(psi: np.ndarray, phi: np.ndarray, pairs) -> np.ndarray:
    """``G[(i,j), (k,l)] = (psi_i . psi_k) (phi_j . phi_l)``."""
    li = np.array([p[0] for p in pairs], dtype=np.int64)
    rj = np.array([p[1] for p in pairs], dtype=np.int64)
    gl = psi[:, li].T @ psi[:, li]
    gr = phi[:, rj].T @ phi[:, rj]
    return gl * gr


class _GrowingGram:
    """Raw Gram matrix of the distinct atoms selected so far on one side."""

    def __init__(self, atoms: np.ndarray):
        self.atoms = atoms
        self.index: dict[int, int] = {}
        self.order: list[int] = []
        self.gram = np.zeros((0, 0))

    def add(self, atom: int) -> int:
        pos = self.index.get(atom)
        if pos is not None:
            return pos
        col = self.atoms[:, self.order].T @ self.atoms[:, atom] if self.order else np.zeros(0)
        diag = float(self.atoms[:, atom] @ self.atoms[:, atom])
        n = len(self.order)
        g = np.empty((n + 1, n + 1))
        g[:n, :n] = self.gram
        g[:n, n] = col
        g[n, :n] = col
        g[n, n] = diag
        self.gram = g
        self.index[atom] = n
        self.order.append(atom)
        return n


def run_omp2d(x, psi: Dictionary, phi: Dictionary, target_pairs: int,
              max_atoms: int | None = None, rel_tol: float = 1e-10,
              on_iteration=None) -> tuple[Omp2dModel, PipelineTrace]:
    """Greedy 2D-OMP over outer-product atoms ``psi_i phi_j^T``.

    Each step adds the unselected pair with the largest normalized alignment
    ``|psi_hat_i^T R phi_hat_j|`` (ties go to the first pair in row-major
    order), re-solves least squares for all selected pairs with the raw atoms
    and recomputes the residual. Stops after ``target_pairs`` pairs, once the
    relative residual drops below ``rel_tol``, or once the number of distinct
    atoms reaches ``max_atoms``.
    """
    if target_pairs < 1:
        raise ValueError("target_pairs must be >= 1")
    x = as_dense(x, "x")
    if psi.n_rows != x.shape[0] or phi.n_rows != x.shape[1]:
        raise ValueError(f"x is {x.shape} but dictionaries have {psi.n_rows} and {phi.n_rows} rows")
    psi_hat, phi_hat = psi.normalized_copy(), phi.normalized_copy()
    n_left, n_right = psi.n_atoms, phi.n_atoms
    scale_l, scale_r = column_norms(psi.atoms), column_norms(phi.atoms)
    x_norm = frobenius_norm(x)
    trace = PipelineTrace(fingerprint(x, psi, phi), x_norm, n_left, n_right,
                          [TraceRow(0, 0, 0, x_norm, 0.0)])
    left, right = _GrowingGram(psi.atoms), _GrowingGram(phi.atoms)
    pairs: list[tuple[int, int]] = []
    pos_l: list[int] = []
    pos_r: list[int] = []
    rhs: list[float] = []
    chol = np.zeros((0, 0))
    singular = False
    coeffs = np.zeros(0)
    taken = np.zeros((n_left, n_right), dtype=bool)
    residual = x
    p0_signed = None
    elapsed = 0.0
    trace.stop_reason = "target_pairs"
    for it in range(1, min(target_pairs, n_left * n_right) + 1):
        if x_norm == 0.0 or trace.last.residual_norm / x_norm < rel_tol:
            trace.stop_reason = "converged"
            break
        if max_atoms is not None and len(left.order) + len(right.order) >= max_atoms:
            trace.stop_reason = "atom_budget"
            break
        t0 = time.perf_counter()
        proj = project(residual, psi_hat, phi_hat)
        if p0_signed is None:
            p0_signed = proj  # residual == x on the first pass
        scores = np.abs(proj)
        scores[taken] = -1.0
        flat = int(np.argmax(scores))
        if scores.flat[flat] <= 0.0:
            trace.stop_reason = "stalled"
            break
        i, j = divmod(flat, n_right)
        taken[i, j] = True
        pairs.append((i, j))
        pos_l.append(left.add(i))
        pos_r.append(right.add(j))
        rhs.append(p0_signed[i, j] * scale_l[i] * scale_r[j])
        gl = left.gram[np.ix_(pos_l, [pos_l[-1]])][:, 0]
        gr = right.gram[np.ix_(pos_r, [pos_r[-1]])][:, 0]
        g = gl * gr
        b = np.asarray(rhs)
        if not singular:
            n = len(pairs) - 1
            w = solve_triangular(chol, g[:n], lower=True) if n else np.zeros(0)
            d2 = g[n] - w @ w
            if d2 > 1e-12 * g[n]:
                new = np.zeros((n + 1, n + 1))
                new[:n, :n] = chol
                new[n, :n] = w
                new[n, n] = np.sqrt(d2)
                chol = new
                z = solve_triangular(chol, b, lower=True)
                coeffs = solve_triangular(chol.T, z, lower=False)
            else:
                singular = True
                warnings.warn(f"pair Gram system singular at pair {len(pairs)}; "
                              "falling back to the pseudo-inverse", SingularGramWarning)
        if singular:
            gram = left.gram[np.ix_(pos_l, pos_l)] * right.gram[np.ix_(pos_r, pos_r)]
            coeffs = pseudo_inverse(gram) @ b
        block = np.zeros((len(left.order), len(right.order)))
        block[pos_l, pos_r] = coeffs
        residual = x - (psi.atoms[:, left.order] @ block) @ phi.atoms[:, right.order].T
        elapsed += time.perf_counter() - t0
        trace.rows.append(TraceRow(it, len(left.order), len(right.order),
                                   frobenius_norm(residual), elapsed))
        if on_iteration is not None:
            on_iteration(it, pairs, coeffs)
    else:
        if x_norm == 0.0 or trace.last.residual_norm / x_norm < rel_tol:
            trace.stop_reason = "converged"
    return Omp2dModel(list(pairs), coeffs.copy(), singular), trace


def run_sc_als(x, psi: Dictionary, phi: Dictionary, ratio: float,
               coder_cfg: CoderConfig | None = None, rank: int = 3
               ) -> tuple[EncodingModel, PipelineTrace]:
    """One-shot screening at ``ratio * max|P|`` followed by a single coder fit."""
    coder_cfg = coder_cfg or CoderConfig()
    x = as_dense(x, "x")
    if psi.n_rows != x.shape[0] or phi.n_rows != x.shape[1]:
        raise ValueError(f"x is {x.shape} but dictionaries have {psi.n_rows} and {phi.n_rows} rows")
    x_norm = frobenius_norm(x)
    trace = PipelineTrace(fingerprint(x, psi, phi), x_norm, psi.n_atoms, phi.n_atoms,
                          [TraceRow(0, 0, 0, x_norm, 0.0)])
    t0 = time.perf_counter()
    state = screen(x, psi.normalized_copy(), phi.normalized_copy(), ratio)
    psi_s, phi_s = psi.sub(state.left), phi.sub(state.right)
    model = coder.with_selection(coder.fit(x, psi_s, phi_s, rank, coder_cfg), state)
    residual = x - coder.reconstruct(model, psi_s, phi_s)
    trace.rows.append(TraceRow(1, len(state.left), len(state.right),
                               frobenius_norm(residual), time.perf_counter() - t0))
    trace.stop_reason = "single_fit"
    return model, trace
