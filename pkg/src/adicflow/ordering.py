"""Vershik orderings: a linear order on the edges leaving each vertex."""
from __future__ import annotations

from dataclasses import dataclass

from .graph_core import OrientedGraph


@dataclass(frozen=True)
class VershikOrdering:
    """``order[v]`` lists the edges with ``I(e) = v`` from minimal to maximal."""

    order: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "order", tuple(tuple(int(e) for e in fam) for fam in self.order))
        seen = [e for fam in self.order for e in fam]
        if len(seen) != len(set(seen)):
            raise ValueError("an edge appears in two places of the ordering")

    @classmethod
    def by_edge_id(cls, g: OrientedGraph) -> "VershikOrdering":
        return cls(tuple(tuple(g.out_edges(v)) for v in range(g.m)))

    def validate(self, g: OrientedGraph):
        if len(self.order) != g.m:
            raise ValueError("ordering must list one family per vertex")
        for v, fam in enumerate(self.order):
            if sorted(fam) != sorted(g.out_edges(v)):
                raise ValueError(f"family of vertex {v} is not the set of edges leaving it")
        return self

    def rank(self, e: int) -> int:
        for fam in self.order:
            if e in fam:
                return fam.index(e)
        raise KeyError(e)

    def is_max(self, e: int, g: OrientedGraph) -> bool:
        return self.order[g.I[e]][-1] == e

    def is_min(self, e: int, g: OrientedGraph) -> bool:
        return self.order[g.I[e]][0] == e

    def next_edge(self, e: int, g: OrientedGraph) -> int | None:
        fam = self.order[g.I[e]]
        i = fam.index(e)
        return fam[i + 1] if i + 1 < len(fam) else None

    def prev_edge(self, e: int, g: OrientedGraph) -> int | None:
        fam = self.order[g.I[e]]
        i = fam.index(e)
        return fam[i - 1] if i > 0 else None

    def min_edge(self, v: int) -> int:
        return self.order[v][0]

    def max_edge(self, v: int) -> int:
        return self.order[v][-1]

    def to_dict(self) -> dict:
        return {"order": [list(f) for f in self.order]}

    @classmethod
    def from_dict(cls, d: dict) -> "VershikOrdering":
        return cls(tuple(tuple(f) for f in d["order"]))
