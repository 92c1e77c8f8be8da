"""Low-rank coding over fixed sub-dictionaries.

Both solvers minimise ``||X - Psi_s Y W Phi_s^T||_F`` by alternating
closed-form updates of ``Y`` and ``W``:

* exact: ``Y = Psi_s^+ X (W Phi_s^T)^+`` and ``W = (Psi_s Y)^+ X (Phi_s^+)^T``;
* fast: with ``C = Psi_s^+ X (Phi_s^+)^T`` fixed, ``Y = C W^+`` and ``W = Y^+ C``.

The fast updates coincide with the exact ones when the sub-dictionaries have
orthonormal columns. For general sub-dictionaries they minimise
``||C - Y W||_F`` instead, which is a different objective.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .numerics import pseudo_inverse
from .selection import SelectionState


class Variant(str, enum.Enum):
    EXACT = "exact"
    FAST = "fast"


@dataclass(frozen=True)
class CoderConfig:
    variant: Variant = Variant.EXACT
    max_inner_iters: int = 50
    tol: float = 1e-6
    rcond: float | None = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_inner_iters < 1:
            raise ValueError("max_inner_iters must be >= 1")


@dataclass
class EncodingModel:
    """Selected atoms plus factors ``y`` (|I_s| x r) and ``w`` (r x |J_s|).

    ``history`` holds the squared objective after every half-update when the
    fit was asked to record it.
    """

    selection: SelectionState
    y: np.ndarray
    w: np.ndarray
    rank: int
    inner_iters: int = 0
    history: list = field(default_factory=list)

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if self.y.shape[1] != self.w.shape[0]:
            raise ValueError("y column count must equal w row count")

    @property
    def coefficients(self) -> np.ndarray:
        """The ``|I_s| x |J_s|`` coefficient block ``Y W``."""
        return self.y @ self.w

    def full_coefficients(self, n_left: int, n_right: int) -> np.ndarray:
        z = np.zeros((n_left, n_right))
        if self.selection.left and self.selection.right:
            z[np.ix_(self.selection.left, self.selection.right)] = self.coefficients
        return z


def empty_model(rank: int, selection: SelectionState | None = None) -> EncodingModel:
    """A model with no usable factors (one side of the selection is empty)."""
    sel = selection.copy() if selection is not None else SelectionState()
    return EncodingModel(sel, np.zeros((len(sel.left), 0)), np.zeros((0, len(sel.right))), rank)


def effective_rank(rank: int, n_left: int, n_right: int) -> int:
    return min(rank, n_left, n_right)


def objective(x, psi_s, phi_s, y, w) -> float:
    """Squared residual ``||X - Psi_s Y W Phi_s^T||_F^2``."""
    return float(np.sum((x - reconstruct_factors(psi_s, phi_s, y, w)) ** 2))


def reconstruct_factors(psi_s, phi_s, y, w) -> np.ndarray:
    if y.size == 0 or w.size == 0:
        return np.zeros((psi_s.shape[0], phi_s.shape[0]))
    return (psi_s @ y) @ (w @ phi_s.T)


def reconstruct(model: EncodingModel, psi_s, phi_s) -> np.ndarray:
    psi_s = np.asarray(psi_s, dtype=np.float64)
    phi_s = np.asarray(phi_s, dtype=np.float64)
    if psi_s.shape[1] != model.y.shape[0] or phi_s.shape[1] != model.w.shape[1]:
        raise ValueError(f"sub-dictionary shapes {psi_s.shape}, {phi_s.shape} do not match "
                         f"factors {model.y.shape}, {model.w.shape}")
    return reconstruct_factors(psi_s, phi_s, model.y, model.w)


def _initial_factors(a: int, b: int, r: int, cfg: CoderConfig, init: EncodingModel | None):
    rng = np.random.default_rng(cfg.seed)
    if init is None:
        return rng.random((a, r)), rng.random((r, b))
    y0, w0 = init.y, init.w
    if y0.shape[0] > a or w0.shape[1] > b or y0.shape[1] > r:
        raise ValueError("initial factors are larger than the requested model")
    y = np.zeros((a, r))
    w = np.zeros((r, b))
    y[: y0.shape[0], : y0.shape[1]] = y0
    w[: w0.shape[0], : w0.shape[1]] = w0
    if w0.shape[0] < r:
        # new rank components start random in W only, so Y W is unchanged
        # and the first Y update can use them
        w[w0.shape[0]:, :] = rng.random((r - w0.shape[0], b))
    return y, w


def _rel_change(new: np.ndarray, old: np.ndarray) -> float:
    denom = np.linalg.norm(old)
    diff = np.linalg.norm(new - old)
    if denom == 0.0:
        return 0.0 if diff == 0.0 else np.inf
    return diff / denom


def _check_shapes(x, psi_s, phi_s):
    x = np.asarray(x, dtype=np.float64)
    psi_s = np.asarray(psi_s, dtype=np.float64)
    phi_s = np.asarray(phi_s, dtype=np.float64)
    if psi_s.ndim != 2 or phi_s.ndim != 2 or x.shape != (psi_s.shape[0], phi_s.shape[0]):
        raise ValueError(f"x {x.shape} incompatible with sub-dictionaries "
                         f"{psi_s.shape} and {phi_s.shape}")
    return x, psi_s, phi_s


def _balance(y: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rescale each rank component so ``Y[:, c]`` and ``W[c, :]`` share a norm.

    ``Y W`` is unchanged. Without this the free scale of each component can
    drift geometrically when the data barely projects onto the sub-dictionaries.
    """
    ny = np.linalg.norm(y, axis=0)
    nw = np.linalg.norm(w, axis=1)
    ok = (ny > 0) & (nw > 0)
    f = np.ones_like(ny)
    f[ok] = np.sqrt(nw[ok] / ny[ok])
    return y * f, w / f[:, None]


def _fit(x, psi_s, phi_s, rank, cfg, init, record_history, fast):
    x, psi_s, phi_s = _check_shapes(x, psi_s, phi_s)
    a, b = psi_s.shape[1], phi_s.shape[1]
    sel = SelectionState()  # callers attach indices with with_selection()
    if a == 0 or b == 0:
        return EncodingModel(sel, np.zeros((a, 0)), np.zeros((0, b)), rank)
    r = effective_rank(rank, a, b)
    y, w = _initial_factors(a, b, r, cfg, init)
    psi_inv = pseudo_inverse(psi_s, cfg.rcond)
    phi_inv = pseudo_inverse(phi_s, cfg.rcond)
    history = []
    if fast:
        core = (psi_inv @ x) @ phi_inv.T
    else:
        left_proj = psi_inv @ x          # a x M
        right_proj = x @ phi_inv.T       # N x b
    it = 0
    for it in range(1, cfg.max_inner_iters + 1):
        if fast:
            y_new = core @ pseudo_inverse(w, cfg.rcond)
        else:
            y_new = left_proj @ pseudo_inverse(w @ phi_s.T, cfg.rcond)
        if record_history:
            history.append(objective(x, psi_s, phi_s, y_new, w))
        if fast:
            w_new = pseudo_inverse(y_new, cfg.rcond) @ core
        else:
            w_new = pseudo_inverse(psi_s @ y_new, cfg.rcond) @ right_proj
        if record_history:
            history.append(objective(x, psi_s, phi_s, y_new, w_new))
        y_new, w_new = _balance(y_new, w_new)
        done = _rel_change(y_new, y) < cfg.tol and _rel_change(w_new, w) < cfg.tol
        y, w = y_new, w_new
        if done:
            break
    return EncodingModel(sel, y, w, rank, inner_iters=it, history=history)


def fit_exact(x, psi_s, phi_s, rank: int, cfg: CoderConfig | None = None,
              init: EncodingModel | None = None, record_history: bool = False) -> EncodingModel:
    """Alternating exact least-squares updates of ``Y`` and ``W``.

    ``init`` (e.g. the previous outer iteration's model) is zero-padded to the
    new shapes; without it the factors start uniform on ``[0, 1)``.
    """
    return _fit(x, psi_s, phi_s, rank, cfg or CoderConfig(), init, record_history, fast=False)


def fit_fast(x, psi_s, phi_s, rank: int, cfg: CoderConfig | None = None,
             init: EncodingModel | None = None, record_history: bool = False) -> EncodingModel:
    """Alternating updates against the pre-projected core ``C``; see module docstring."""
    return _fit(x, psi_s, phi_s, rank, cfg or CoderConfig(variant=Variant.FAST), init,
                record_history, fast=True)


def fit(x, psi_s, phi_s, rank: int, cfg: CoderConfig, init=None, record_history=False):
    fn = fit_fast if cfg.variant is Variant.FAST else fit_exact
    return fn(x, psi_s, phi_s, rank, cfg, init, record_history)


def with_selection(model: EncodingModel, selection: SelectionState) -> EncodingModel:
    return replace(model, selection=selection.copy())
