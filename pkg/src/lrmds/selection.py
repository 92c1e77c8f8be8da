"""Atom scoring and selection rules.

Scores are alignments of the residual with normalized 2D atoms,
``P = Psi_hat.T @ R @ Phi_hat``. Selection rules extend a
:class:`SelectionState` and never remove indices.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dictio import Dictionary


class EmptySelectionError(ValueError):
    pass


@dataclass
class SelectionState:
    """Ordered, duplicate-free left (``I_s``) and right (``J_s``) atom indices."""

    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)

    def __post_init__(self):
        self.left = [int(i) for i in self.left]
        self.right = [int(j) for j in self.right]
        if len(set(self.left)) != len(self.left) or len(set(self.right)) != len(self.right):
            raise ValueError("selection contains duplicate indices")

    def copy(self) -> "SelectionState":
        return SelectionState(list(self.left), list(self.right))

    @property
    def n_atoms(self) -> int:
        return len(self.left) + len(self.right)

    def check_bounds(self, n_left: int, n_right: int) -> None:
        if any(not 0 <= i < n_left for i in self.left):
            raise IndexError(f"left index out of range [0, {n_left})")
        if any(not 0 <= j < n_right for j in self.right):
            raise IndexError(f"right index out of range [0, {n_right})")


def _matrix(d) -> np.ndarray:
    return d.atoms if isinstance(d, Dictionary) else np.asarray(d, dtype=np.float64)


def project(residual, psi_hat, phi_hat) -> np.ndarray:
    """Alignment scores ``P[i, j] = psi_hat_i^T R phi_hat_j``."""
    r = np.asarray(residual, dtype=np.float64)
    psi, phi = _matrix(psi_hat), _matrix(phi_hat)
    if r.shape != (psi.shape[0], phi.shape[0]):
        raise ValueError(f"residual shape {r.shape} does not match dictionaries "
                         f"({psi.shape[0]} x {phi.shape[0]})")
    n, m = r.shape
    i, j = psi.shape[1], phi.shape[1]
    # pick the cheaper association order
    if i * n * m + i * m * j <= n * m * j + i * n * j:
        return (psi.T @ r) @ phi
    return psi.T @ (r @ phi)


def _ranked_pairs(p: np.ndarray, chunk: int = 4096):
    """Yield flat indices of ``p`` by descending ``|p|``, ties in row-major order."""
    mag = np.abs(p).ravel()
    remaining = np.ones(mag.size, dtype=bool)
    left = mag.size
    while left:
        take = min(chunk, left)
        cand = np.flatnonzero(remaining)
        vals = mag[cand]
        if take < cand.size:
            cutoff = np.partition(vals, cand.size - take)[cand.size - take]
            sel = cand[vals >= cutoff]
        else:
            sel = cand
        order = np.lexsort((sel, -mag[sel]))
        batch = sel[order]
        remaining[batch] = False
        left -= batch.size
        yield from batch.tolist()
        chunk *= 4


def select_top_k(p, state: SelectionState, k: int) -> SelectionState:
    """Walk pairs by descending ``|P|`` adding unseen row/column atoms until ``k`` are new.

    A pair whose row and column are both new adds two atoms, so up to
    ``k + 1`` atoms may be added.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    p = np.asarray(p, dtype=np.float64)
    n_left, n_right = p.shape
    out = state.copy()
    seen_l, seen_r = set(out.left), set(out.right)
    if len(seen_l) == n_left and len(seen_r) == n_right:
        return out
    cnt = 0
    for flat in _ranked_pairs(p):
        if cnt >= k:
            break
        i, j = divmod(flat, n_right)
        if i not in seen_l:
            seen_l.add(i)
            out.left.append(i)
            cnt += 1
        if j not in seen_r:
            seen_r.add(j)
            out.right.append(j)
            cnt += 1
    return out


def _top_unselected(energy: np.ndarray, chosen: list[int], k: int) -> list[int]:
    if k <= 0:
        return []
    scale = energy.max() if energy.size and energy.max() > 0 else 1.0
    # energies equal to 12 significant digits count as ties; lowest index wins
    key = np.round(energy / scale, 12)
    order = np.lexsort((np.arange(energy.size), -key))
    taken = set(chosen)
    picks = []
    for idx in order.tolist():
        if idx not in taken:
            picks.append(idx)
            if len(picks) == k:
                break
    return picks


def select_1d(residual, psi_hat, phi_hat, state: SelectionState,
              k_left: int, k_right: int) -> SelectionState:
    """Independent per-dictionary selection by projection energy."""
    r = np.asarray(residual, dtype=np.float64)
    psi, phi = _matrix(psi_hat), _matrix(phi_hat)
    if r.shape != (psi.shape[0], phi.shape[0]):
        raise ValueError(f"residual shape {r.shape} does not match dictionaries")
    out = state.copy()
    if k_left > 0:
        p1 = psi.T @ r
        out.left += _top_unselected(np.einsum("ij,ij->i", p1, p1), out.left, k_left)
    if k_right > 0:
        p2 = r @ phi
        out.right += _top_unselected(np.einsum("ij,ij->j", p2, p2), out.right, k_right)
    return out


def select_random(state: SelectionState, left_total: int, right_total: int,
                  k_left: int, k_right: int, seed) -> SelectionState:
    """Uniform draws without replacement from the unselected indices."""
    rng = np.random.default_rng(seed)
    free_l = np.setdiff1d(np.arange(left_total), state.left)
    free_r = np.setdiff1d(np.arange(right_total), state.right)
    if k_left > free_l.size or k_right > free_r.size:
        raise ValueError(f"cannot draw {k_left}/{k_right} atoms, only "
                         f"{free_l.size}/{free_r.size} remain")
    out = state.copy()
    out.left += rng.choice(free_l, size=k_left, replace=False).tolist()
    out.right += rng.choice(free_r, size=k_right, replace=False).tolist()
    return out


def screen(x, psi_hat, phi_hat, ratio: float) -> SelectionState:
    """Keep atoms whose best pair alignment reaches ``ratio * max|P|``."""
    if not 0.0 < ratio <= 1.0:
        raise ValueError("ratio must lie in (0, 1]")
    p = np.abs(project(x, psi_hat, phi_hat))
    top = p.max() if p.size else 0.0
    if top == 0.0:
        raise EmptySelectionError("no atom has nonzero alignment with the data")
    lam = ratio * top
    left = np.flatnonzero(p.max(axis=1) >= lam).tolist()
    right = np.flatnonzero(p.max(axis=0) >= lam).tolist()
    if not left or not right:
        raise EmptySelectionError("screening removed every atom on one side")
    return SelectionState(left, right)
