"""Analytical dictionaries: graph Fourier, graph Haar, Ramanujan, B-spline.

Every builder returns an *unnormalized* :class:`Dictionary`; call
:meth:`Dictionary.normalized_copy` when unit-norm atoms are needed.
"""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.interpolate import BSpline
from scipy.sparse.csgraph import connected_components

from .matio import GraphSpec
from .numerics import DegenerateAtomError, as_dense, column_norms, normalize_columns


class Family(str, enum.Enum):
    GFT = "gft"
    GRAPH_HAAR = "haar"
    RAMANUJAN = "ramanujan"
    SPLINE = "spline"
    COMPOSITE = "composite"
    CUSTOM = "custom"


@dataclass
class Dictionary:
    """Atom matrix (one atom per column) plus provenance metadata."""

    atoms: np.ndarray
    family: Family = Family.CUSTOM
    normalized: bool = False
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.atoms = as_dense(self.atoms, "atoms")
        self.family = Family(self.family)
        norms = column_norms(self.atoms)
        zero = np.flatnonzero(norms == 0.0)
        if zero.size:
            raise DegenerateAtomError(int(zero[0]))
        if self.normalized and np.any(np.abs(norms - 1.0) > 1e-10):
            raise ValueError("dictionary flagged normalized but has non-unit columns")

    @property
    def shape(self) -> tuple[int, int]:
        return self.atoms.shape

    @property
    def n_rows(self) -> int:
        return self.atoms.shape[0]

    @property
    def n_atoms(self) -> int:
        return self.atoms.shape[1]

    def normalized_copy(self) -> "Dictionary":
        if self.normalized:
            return self
        return Dictionary(normalize_columns(self.atoms), self.family, True, dict(self.params))

    def sub(self, indices) -> np.ndarray:
        return self.atoms[:, np.asarray(indices, dtype=np.int64)]

    def sidecar(self) -> dict:
        return {"family": self.family.value, "normalized": self.normalized,
                "rows": self.n_rows, "cols": self.n_atoms, "params": self.params}


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    # first entry above noise made positive, for reproducible output
    out = vecs.copy()
    for j in range(out.shape[1]):
        col = out[:, j]
        big = np.flatnonzero(np.abs(col) > 1e-10 * np.max(np.abs(col)))
        if big.size and col[big[0]] < 0:
            out[:, j] = -col
    return out


def graph_spectrum(g: GraphSpec) -> tuple[np.ndarray, np.ndarray]:
    """Ascending eigenvalues and sign-fixed eigenvectors of ``D - A``."""
    if g.node_count < 1:
        raise ValueError("graph must have at least one node")
    try:
        vals, vecs = np.linalg.eigh(g.laplacian())
    except np.linalg.LinAlgError as exc:
        from .numerics import NumericalError
        raise NumericalError(f"Laplacian eigendecomposition failed: {exc}",
                             (g.node_count, g.node_count)) from exc
    return vals, _fix_signs(vecs)


def build_gft(g: GraphSpec) -> Dictionary:
    _, vecs = graph_spectrum(g)
    return Dictionary(vecs, Family.GFT, False, {"nodes": g.node_count})


def _bipartition(adj: np.ndarray, cell: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split ``cell`` (sorted node ids) into two non-empty children."""
    sub = adj[np.ix_(cell, cell)]
    ncomp, labels = connected_components(sub, directed=False)
    if ncomp > 1:
        first = labels == labels[0]
        return cell[first], cell[~first]
    lap = np.diag(sub.sum(axis=1)) - sub
    _, vecs = np.linalg.eigh(lap)
    fiedler = _fix_signs(vecs[:, 1:2])[:, 0]
    pos = fiedler >= 0
    a, b = cell[pos], cell[~pos]
    if a.size == 0 or b.size == 0:
        half = cell.size // 2
        a, b = cell[:half], cell[half:]
    return a, b


def haar_tree(g: GraphSpec) -> list[tuple[np.ndarray, np.ndarray]]:
    """Breadth-first list of ``(child_a, child_b)`` splits of the recursive bipartition."""
    adj = g.adjacency()
    splits = []
    queue = deque([np.arange(g.node_count)])
    while queue:
        cell = queue.popleft()
        if cell.size < 2:
            continue
        a, b = _bipartition(adj, cell)
        splits.append((a, b))
        queue.append(a)
        queue.append(b)
    return splits


def build_graph_haar(g: GraphSpec) -> Dictionary:
    """Orthonormal Haar-like basis from recursive spectral bisection.

    Column 0 is the constant vector; every split of a cell into children
    ``A`` and ``B`` adds the atom ``1_A/|A| - 1_B/|B|`` scaled to unit norm.
    """
    n = g.node_count
    if n < 2:
        raise ValueError("graph Haar dictionary needs at least 2 nodes")
    atoms = np.zeros((n, n))
    atoms[:, 0] = 1.0 / math.sqrt(n)
    for col, (a, b) in enumerate(haar_tree(g), start=1):
        atoms[a, col] = 1.0 / a.size
        atoms[b, col] = -1.0 / b.size
        atoms[:, col] /= np.linalg.norm(atoms[:, col])
    return Dictionary(atoms, Family.GRAPH_HAAR, False, {"nodes": n})


@lru_cache(maxsize=None)
def totient(q: int) -> int:
    if q < 1:
        raise ValueError("totient is defined for q >= 1")
    result, m, p = q, q, 2
    while p * p <= m:
        if m % p == 0:
            while m % p == 0:
                m //= p
            result -= result // p
        p += 1
    if m > 1:
        result -= result // m
    return result


def mobius(n: int) -> int:
    result, m, p = 1, n, 2
    while p * p <= m:
        if m % p == 0:
            m //= p
            if m % p == 0:
                return 0
            result = -result
        p += 1
    if m > 1:
        result = -result
    return result


def ramanujan_sum(q: int, n: np.ndarray) -> np.ndarray:
    """Integer-valued ``c_q(n) = sum_{d | gcd(n, q)} mu(q/d) d``."""
    n = np.asarray(n, dtype=np.int64)
    g = np.gcd(n, q)
    out = np.zeros(n.shape, dtype=np.int64)
    for d in range(1, q + 1):
        if q % d == 0:
            mu = mobius(q // d)
            if mu:
                out += np.where(g % d == 0, mu * d, 0)
    return out


def ramanujan_column_count(max_period: int) -> int:
    return sum(totient(q) for q in range(1, max_period + 1))


def ramanujan_period_for_columns(columns: int) -> int:
    """Smallest ``max_period`` whose Ramanujan dictionary has at least ``columns`` atoms."""
    q, total = 0, 0
    while total < columns:
        q += 1
        total += totient(q)
    return q


def build_ramanujan(length: int, max_period: int) -> Dictionary:
    if length < 1 or max_period < 1:
        raise ValueError("length and max_period must be >= 1")
    n = np.arange(length)
    cols = []
    periods = []
    for q in range(1, max_period + 1):
        base = ramanujan_sum(q, np.arange(q))
        for s in range(totient(q)):
            cols.append(base[(n - s) % q])
            periods.append(q)
    atoms = np.column_stack(cols).astype(np.float64)
    return Dictionary(atoms, Family.RAMANUJAN, False,
                      {"length": length, "max_period": max_period, "periods": periods})


def dyadic_knots(length: int, degree: int = 3) -> list[int]:
    """Basis counts ``degree+1, 2(degree+1), ...`` while every atom keeps >= 2 samples."""
    counts = []
    c = degree + 1
    while c <= max(length // 2, degree + 1):
        counts.append(c)
        c *= 2
    return counts


def spline_block(length: int, n_basis: int, degree: int) -> np.ndarray:
    """``length x n_basis`` clamped uniform B-spline design matrix on ``[0, 1]``."""
    inner = np.linspace(0.0, 1.0, n_basis - degree + 1)
    knots = np.r_[np.zeros(degree), inner, np.ones(degree)]
    x = np.linspace(0.0, 1.0, length)
    return BSpline.design_matrix(x, knots, degree).toarray()


def build_spline(length: int, knots_per_scale=None, degree: int = 3) -> Dictionary:
    if degree < 0:
        raise ValueError("degree must be non-negative")
    if length < degree + 2:
        raise ValueError(f"length must be >= degree + 2 = {degree + 2}")
    if knots_per_scale is None:
        knots_per_scale = dyadic_knots(length, degree)
    knots_per_scale = [int(k) for k in knots_per_scale]
    if not knots_per_scale:
        raise ValueError("at least one scale is required")
    blocks = []
    for count in knots_per_scale:
        if count < degree + 1:
            raise ValueError(f"knot count {count} infeasible: need >= degree + 1 = {degree + 1}")
        block = spline_block(length, count, degree)
        empty = np.flatnonzero(~block.any(axis=0))
        if empty.size:
            raise ValueError(f"knot count {count} infeasible on {length} samples: "
                             f"basis function {int(empty[0])} has no support")
        blocks.append(block)
    return Dictionary(np.hstack(blocks), Family.SPLINE, False,
                      {"length": length, "knots_per_scale": knots_per_scale, "degree": degree})


def stack(dicts) -> Dictionary:
    dicts = list(dicts)
    if not dicts:
        raise ValueError("stack needs at least one dictionary")
    rows = {d.n_rows for d in dicts}
    if len(rows) != 1:
        raise ValueError(f"row-count mismatch among stacked dictionaries: {sorted(rows)}")
    if len(dicts) == 1:
        return dicts[0]
    return Dictionary(np.hstack([d.atoms for d in dicts]), Family.COMPOSITE,
                      all(d.normalized for d in dicts),
                      {"parts": [{"family": d.family.value, "cols": d.n_atoms, **d.params}
                                 for d in dicts]})


def build_from_params(family: str, graph: GraphSpec | None = None, length: int | None = None,
                      max_period: int | None = None, knots=None, degree: int = 3) -> Dictionary:
    family = Family(family)
    if family in (Family.GFT, Family.GRAPH_HAAR):
        if graph is None:
            raise ValueError(f"family {family.value} needs a graph")
        return build_gft(graph) if family is Family.GFT else build_graph_haar(graph)
    if length is None:
        raise ValueError(f"family {family.value} needs a length")
    if family is Family.RAMANUJAN:
        if max_period is None:
            raise ValueError("ramanujan family needs max_period")
        return build_ramanujan(length, max_period)
    if family is Family.SPLINE:
        return build_spline(length, knots, degree)
    raise ValueError(f"cannot build family {family.value} from parameters")
