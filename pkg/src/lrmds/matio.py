"""Reading and writing matrices, graphs and dictionary sidecars.

Dense matrices use a small CSV dialect: the first line is ``rows,cols`` and
each following line holds one matrix row. Graphs use Matrix Market coordinate
files.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse

from .numerics import as_dense


class ParseError(ValueError):
    """Malformed input file. ``line`` is 1-based when known."""

    def __init__(self, message: str, path=None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)
        self.path = path
        self.line = line


@dataclass(frozen=True)
class GraphSpec:
    """Undirected weighted graph stored as a canonical edge list.

    Edges satisfy ``u < v``, no duplicates, positive weights, and are sorted
    lexicographically.
    """

    node_count: int
    u: np.ndarray
    v: np.ndarray
    weight: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.int64)
        v = np.asarray(self.v, dtype=np.int64)
        w = np.asarray(self.weight, dtype=np.float64)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "weight", w)
        if self.node_count < 0:
            raise ValueError("node_count must be non-negative")
        if not (u.shape == v.shape == w.shape) or u.ndim != 1:
            raise ValueError("edge arrays must be 1-D and of equal length")
        if u.size:
            if u.min() < 0 or v.max() >= self.node_count:
                raise ValueError("edge endpoint out of range")
            if np.any(u >= v):
                raise ValueError("edges must be canonical (u < v, no self-loops)")
            if np.any(~np.isfinite(w)) or np.any(w <= 0):
                raise ValueError("edge weights must be finite and positive")
            key = u * self.node_count + v
            if np.any(np.diff(key) <= 0):
                raise ValueError("edges must be sorted and free of duplicates")

    @classmethod
    def from_edges(cls, node_count: int, edges, merge: str = "max") -> "GraphSpec":
        """Build a canonical graph from ``(u, v[, w])`` tuples in any orientation.

        Self-loops are dropped; repeated pairs are merged with ``merge``
        (``"max"`` or ``"sum"``).
        """
        rows = [tuple(e) for e in edges]
        if not rows:
            return cls(node_count, np.empty(0, int), np.empty(0, int), np.empty(0))
        a = np.array([r[0] for r in rows], dtype=np.int64)
        b = np.array([r[1] for r in rows], dtype=np.int64)
        w = np.array([r[2] if len(r) > 2 else 1.0 for r in rows], dtype=np.float64)
        return cls._canonical(node_count, a, b, w, merge)

    @classmethod
    def from_adjacency(cls, adj) -> "GraphSpec":
        adj = scipy.sparse.coo_matrix(adj)
        if adj.shape[0] != adj.shape[1]:
            raise ValueError("adjacency matrix must be square")
        return cls._canonical(adj.shape[0], adj.row, adj.col, adj.data, "max")

    @classmethod
    def _canonical(cls, n, a, b, w, merge):
        a = np.asarray(a, dtype=np.int64)
        b = np.asarray(b, dtype=np.int64)
        w = np.asarray(w, dtype=np.float64)
        if a.size and (min(a.min(), b.min()) < 0 or max(a.max(), b.max()) >= n):
            raise ValueError(f"edge endpoint out of range for {n} nodes")
        if np.any(w < 0) or np.any(~np.isfinite(w)):
            raise ValueError("edge weights must be finite and non-negative")
        keep = (a != b) & (w > 0)
        a, b, w = a[keep], b[keep], w[keep]
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        key = lo * max(n, 1) + hi
        uniq, inv = np.unique(key, return_inverse=True)
        merged = np.zeros(uniq.size)
        if merge == "max":
            np.maximum.at(merged, inv, w)
        elif merge == "sum":
            np.add.at(merged, inv, w)
        else:
            raise ValueError(f"unknown merge rule {merge!r}")
        return cls(n, uniq // max(n, 1), uniq % max(n, 1), merged)

    @property
    def edge_count(self) -> int:
        return int(self.u.size)

    def edges(self) -> list[tuple[int, int, float]]:
        return [(int(a), int(b), float(c)) for a, b, c in zip(self.u, self.v, self.weight)]

    def adjacency(self) -> np.ndarray:
        n = self.node_count
        adj = np.zeros((n, n))
        adj[self.u, self.v] = self.weight
        adj[self.v, self.u] = self.weight
        return adj

    def laplacian(self) -> np.ndarray:
        """Combinatorial Laplacian ``D - A`` as a dense matrix."""
        adj = self.adjacency()
        return np.diag(adj.sum(axis=1)) - adj


def read_dense_csv(path) -> np.ndarray:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("empty file, expected 'rows,cols' header", path, 1)
    header = lines[0].split(",")
    try:
        rows, cols = (int(t) for t in header)
    except ValueError:
        raise ParseError(f"bad header {lines[0]!r}, expected 'rows,cols'", path, 1) from None
    if rows < 0 or cols < 0:
        raise ParseError("negative dimension in header", path, 1)
    body = lines[1:]
    # tolerate trailing blank lines only
    while body and not body[-1].strip():
        body.pop()
    out = np.empty((rows, cols))
    for r in range(rows):
        lineno = r + 2
        if r >= len(body):
            raise ParseError(f"expected {rows} data rows, found {len(body)}", path, lineno)
        tokens = body[r].split(",") if cols else ([] if not body[r].strip() else body[r].split(","))
        if len(tokens) != cols:
            raise ParseError(f"expected {cols} values, found {len(tokens)}", path, lineno)
        for c, tok in enumerate(tokens):
            try:
                val = float(tok)
            except ValueError:
                raise ParseError(f"non-numeric token {tok.strip()!r}", path, lineno) from None
            if not math.isfinite(val):
                raise ParseError(f"non-finite value {tok.strip()!r}", path, lineno)
            out[r, c] = val
    if len(body) > rows:
        raise ParseError(f"expected {rows} data rows, found {len(body)}", path, rows + 2)
    return out


def atomic_write_text(path: Path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent if str(path.parent) else ".", prefix=".tmp-", suffix=path.suffix)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_dense_csv(m, path) -> None:
    """Write ``m`` with 17 significant digits so values round-trip exactly."""
    m = as_dense(m)
    parts = [f"{m.shape[0]},{m.shape[1]}\n"]
    for row in m:
        parts.append(",".join(format(float(x), ".17g") for x in row) + "\n")
    atomic_write_text(Path(path), "".join(parts))


def read_graph_mtx(path) -> GraphSpec:
    path = Path(path)
    try:
        info = scipy.io.mminfo(str(path))
    except (ValueError, OSError) as exc:
        raise ParseError(f"malformed Matrix Market header: {exc}", path) from exc
    rows, cols, _entries, fmt, field, _symmetry = info
    if fmt != "coordinate":
        raise ParseError(f"expected coordinate format, got {fmt!r}", path, 1)
    if field not in ("pattern", "real", "integer"):
        raise ParseError(f"unsupported field {field!r}", path, 1)
    if rows != cols:
        raise ParseError(f"adjacency must be square, got {rows}x{cols}", path, 2)
    try:
        coo = scipy.io.mmread(str(path))
    except ValueError as exc:
        raise ParseError(str(exc), path) from exc
    coo = scipy.sparse.coo_matrix(coo)
    data = np.ones(coo.nnz) if field == "pattern" else np.asarray(coo.data, dtype=np.float64)
    if np.any(data < 0):
        raise ParseError("negative edge weight", path)
    return GraphSpec._canonical(rows, coo.row, coo.col, data, "max")


def write_graph_mtx(g: GraphSpec, path) -> None:
    lines = ["%%MatrixMarket matrix coordinate real symmetric\n",
             f"{g.node_count} {g.node_count} {g.edge_count}\n"]
    # lower-triangular storage as required for symmetric files
    for a, b, w in zip(g.u, g.v, g.weight):
        lines.append(f"{b + 1} {a + 1} {format(float(w), '.17g')}\n")
    atomic_write_text(Path(path), "".join(lines))


def write_json(obj, path) -> None:
    atomic_write_text(Path(path), json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
