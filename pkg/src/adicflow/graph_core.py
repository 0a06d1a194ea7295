"""Oriented multigraphs, incidence matrices and admissible words.

Vertices are ``0..m-1``.  Edge ``e`` runs from ``I(e)`` to ``F(e)``.  A word
``e_1 ... e_k`` is admissible when ``F(e_{i+1}) == I(e_i)``, i.e. read from
right to left it is a walk in the graph.  This matches the coordinate
convention of paths ``x`` where ``F(x_{n+1}) == I(x_n)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

try:
    import tomllib
except ImportError:  # python < 3.11
    import tomli as tomllib

DEFAULT_WORD_CAP = 2_000_000


class DepthOverflow(ValueError):
    """Raised when a word enumeration would exceed the configured cap."""


@dataclass(frozen=True)
class OrientedGraph:
    """Finite oriented multigraph.

    ``edges[k] = (I, F)`` is edge ``k``; ids are dense by construction.
    """

    m: int
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("vertex count must be positive")
        edges = tuple((int(a), int(b)) for a, b in self.edges)
        for k, (a, b) in enumerate(edges):
            if not (0 <= a < self.m and 0 <= b < self.m):
                raise ValueError(f"edge {k} has endpoint outside 0..{self.m - 1}")
        object.__setattr__(self, "edges", edges)

    @classmethod
    def from_matrix(cls, Q) -> "OrientedGraph":
        """Canonical graph with ``Q[i, j]`` parallel edges ``i -> j``.

        Edges are labelled in (I, F, local index) order.
        """
        Q = np.asarray(Q)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise ValueError("incidence matrix must be square")
        if np.any(Q < 0) or not np.all(np.equal(np.mod(Q, 1), 0)):
            raise ValueError("incidence matrix must have nonnegative integer entries")
        m = Q.shape[0]
        edges = [(i, j) for i in range(m) for j in range(m) for _ in range(int(Q[i, j]))]
        return cls(m, tuple(edges))

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def I(self) -> np.ndarray:
        return np.array([e[0] for e in self.edges], dtype=np.int64)

    @cached_property
    def F(self) -> np.ndarray:
        return np.array([e[1] for e in self.edges], dtype=np.int64)

    def out_edges(self, v: int) -> list[int]:
        return [k for k, (a, _) in enumerate(self.edges) if a == v]

    def in_edges(self, v: int) -> list[int]:
        return [k for k, (_, b) in enumerate(self.edges) if b == v]

    def is_admissible(self, word) -> bool:
        word = list(word)
        if any(not 0 <= e < self.n_edges for e in word):
            return False
        return all(self.edges[word[i + 1]][1] == self.edges[word[i]][0] for i in range(len(word) - 1))

    def to_dict(self) -> dict:
        return {"m": self.m, "edges": [list(e) for e in self.edges]}


@dataclass(frozen=True)
class ValidationReport:
    problems: tuple[str, ...] = ()
    positive: bool = False

    @property
    def ok(self) -> bool:
        return not self.problems

    def __bool__(self):
        return self.ok


def validate_graph(g: OrientedGraph) -> ValidationReport:
    """List violations of the standing assumptions on ``g``.

    An empty report means every vertex has an outgoing and an incoming edge.
    ``positive`` records whether all incidence entries are positive; it is a
    flag, not a violation.
    """
    problems = []
    outdeg = np.bincount(g.I, minlength=g.m) if g.n_edges else np.zeros(g.m, int)
    indeg = np.bincount(g.F, minlength=g.m) if g.n_edges else np.zeros(g.m, int)
    for v in range(g.m):
        if outdeg[v] == 0:
            problems.append(f"vertex {v} has no outgoing edge")
        if indeg[v] == 0:
            problems.append(f"vertex {v} has no incoming edge")
    positive = bool(np.all(incidence(g) > 0))
    return ValidationReport(tuple(problems), positive)


def incidence(g: OrientedGraph) -> np.ndarray:
    """Incidence matrix ``Q[i, j] = #{e : I(e) = i, F(e) = j}``."""
    Q = np.zeros((g.m, g.m), dtype=np.int64)
    for a, b in g.edges:
        Q[a, b] += 1
    return Q


def is_positive(Q) -> bool:
    return bool(np.all(np.asarray(Q) > 0))


def is_primitive(Q) -> bool:
    """Wielandt test: ``Q^k > 0`` for ``k = (m-1)^2 + 1``."""
    B = (np.asarray(Q) > 0).astype(np.int64)
    m = B.shape[0]
    P = np.eye(m, dtype=np.int64)
    for _ in range((m - 1) ** 2 + 1):
        P = np.minimum(P @ B, 1)
    return bool(np.all(P > 0))


def count_words(g: OrientedGraph, k: int, terminal_vertex: int | None = None) -> int:
    Qk = np.linalg.matrix_power(incidence(g).astype(object), k)
    if terminal_vertex is None:
        return int(sum(Qk.flat))
    return int(sum(Qk[terminal_vertex]))


def enumerate_words(g: OrientedGraph, k: int, terminal_vertex: int | None = None,
                    cap: int = DEFAULT_WORD_CAP) -> list[tuple[int, ...]]:
    """All admissible words ``(e_1, ..., e_k)``.

    With ``terminal_vertex`` set, only words with ``I(e_k) == terminal_vertex``
    are returned.  The count equals the matching entry sum of ``Q^k``.
    """
    if k < 1:
        raise ValueError("depth must be >= 1")
    n = count_words(g, k, terminal_vertex)
    if n > cap:
        raise DepthOverflow(f"{n} words of length {k} exceed cap {cap}")
    # build from the top coordinate e_k downwards
    if terminal_vertex is None:
        partial = [(e,) for e in range(g.n_edges)]
    else:
        partial = [(e,) for e in g.out_edges(terminal_vertex)]
    out_by_vertex = [g.out_edges(v) for v in range(g.m)]
    for _ in range(k - 1):
        partial = [(c,) + w for w in partial for c in out_by_vertex[g.edges[w[0]][1]]]
    return partial


def _load_mapping(path: str | Path) -> dict:
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".toml":
        return tomllib.loads(text)
    return json.loads(text)


def graph_from_spec(spec: dict) -> OrientedGraph:
    """Build a graph from ``{"m", "edges"}`` or ``{"matrix"}``."""
    if "matrix" in spec:
        return OrientedGraph.from_matrix(np.array(spec["matrix"]))
    if "edges" in spec:
        edges = spec["edges"]
        m = spec.get("m")
        if m is None:
            m = 1 + max(max(a, b) for a, b in edges)
        return OrientedGraph(int(m), tuple((int(a), int(b)) for a, b in edges))
    raise ValueError("graph spec needs 'matrix' or 'edges'")


def load_graph(path: str | Path) -> OrientedGraph:
    return graph_from_spec(_load_mapping(path))


# the running example of the test suite: two vertices, three loops each, one edge each way
Q_A = np.array([[3, 1], [1, 3]])
