"""Directed road graph: ingestion, spatial radius queries, shortest paths.

A graph is immutable once loaded; all queries are read-only and safe to run
concurrently from multiple threads.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from heapq import heappop, heappush
from pathlib import Path
from typing import Iterable, NamedTuple

from .geo import (
    GeoPoint,
    PlanePoint,
    Projection,
    dist_point_segment,
    make_projection,
    project,
)

log = logging.getLogger(__name__)

DEFAULT_CELL_SIZE = 100.0  # meters; radius-100 queries touch at most 9 cells
MIN_EDGE_LENGTH = 1e-6


class RoadFileError(ValueError):
    """Raised when a road file cannot be parsed."""


@dataclass(frozen=True, slots=True)
class RoadNode:
    id: str
    pos: PlanePoint
    geo: GeoPoint


@dataclass(frozen=True, slots=True)
class RoadEdge:
    """One directed straight segment. Geometry is precomputed for force loops."""

    id: str
    from_node: str
    to_node: str
    a: PlanePoint  # position of from_node
    b: PlanePoint  # position of to_node
    length: float
    ux: float  # unit direction a -> b
    uy: float
    mid: PlanePoint
    sqrt_length: float
    way_name: str | None = None


class EdgePosition(NamedTuple):
    """A point on a directed edge, ``offset`` meters from its from-node."""

    edge_id: str
    offset: float


class PathStep(NamedTuple):
    """Traversal of ``edge_id`` from ``entry`` to ``exit`` offset (meters)."""

    edge_id: str
    entry: float
    exit: float

    @property
    def traversed(self) -> float:
        return self.exit - self.entry


class Route(NamedTuple):
    steps: list[PathStep]
    length: float


class SpatialGrid:
    """Uniform grid over edge bounding boxes for radius queries."""

    def __init__(self, cell_size: float = DEFAULT_CELL_SIZE):
        if cell_size <= 0:
            raise ValueError("cell_size must be positive")
        self.cell_size = cell_size
        self.cells: dict[tuple[int, int], list[int]] = {}

    def _cell_range(self, x0: float, y0: float, x1: float, y1: float):
        cs = self.cell_size
        return (
            math.floor(x0 / cs),
            math.floor(y0 / cs),
            math.floor(x1 / cs),
            math.floor(y1 / cs),
        )

    def insert(self, idx: int, a: PlanePoint, b: PlanePoint) -> None:
        cx0, cy0, cx1, cy1 = self._cell_range(
            min(a[0], b[0]), min(a[1], b[1]), max(a[0], b[0]), max(a[1], b[1])
        )
        for cx in range(cx0, cx1 + 1):
            for cy in range(cy0, cy1 + 1):
                self.cells.setdefault((cx, cy), []).append(idx)

    def candidates(self, p: PlanePoint, r: float) -> set[int]:
        """Indices of every edge whose bbox shares a cell with the query box."""
        cx0, cy0, cx1, cy1 = self._cell_range(p[0] - r, p[1] - r, p[0] + r, p[1] + r)
        found: set[int] = set()
        cells = self.cells
        for cx in range(cx0, cx1 + 1):
            for cy in range(cy0, cy1 + 1):
                bucket = cells.get((cx, cy))
                if bucket:
                    found.update(bucket)
        return found


@dataclass
class RoadGraph:
    projection: Projection
    nodes: dict[str, RoadNode]
    edges: dict[str, RoadEdge]
    edge_list: list[RoadEdge]  # dense index used by the spatial grid
    adjacency: dict[str, list[str]]  # node id -> outgoing edge ids, sorted
    index: SpatialGrid = field(repr=False)

    def edge(self, edge_id: str) -> RoadEdge:
        return self.edges[edge_id]

    def total_edge_length(self) -> float:
        return sum(e.length for e in self.edge_list)


def _make_edge(
    edge_id: str, frm: RoadNode, to: RoadNode, name: str | None
) -> RoadEdge | None:
    dx = to.pos.x - frm.pos.x
    dy = to.pos.y - frm.pos.y
    length = math.hypot(dx, dy)
    if length < MIN_EDGE_LENGTH:
        log.warning("dropping zero-length edge %s (%s -> %s)", edge_id, frm.id, to.id)
        return None
    return RoadEdge(
        id=edge_id,
        from_node=frm.id,
        to_node=to.id,
        a=frm.pos,
        b=to.pos,
        length=length,
        ux=dx / length,
        uy=dy / length,
        mid=PlanePoint((frm.pos.x + to.pos.x) / 2.0, (frm.pos.y + to.pos.y) / 2.0),
        sqrt_length=math.sqrt(length),
        way_name=name,
    )


def build_graph(
    node_rows: Iterable[tuple[str, float, float]],
    edge_rows: Iterable[tuple[str, str, str, bool, str | None]],
    proj: Projection | None = None,
    cell_size: float = DEFAULT_CELL_SIZE,
) -> RoadGraph:
    """Assemble a RoadGraph from parsed rows.

    ``edge_rows`` are street declarations ``(id, from, to, oneway, name)``; a
    two-way street expands into directed edges ``id`` and ``id_r``.
    """
    geo_by_id: dict[str, GeoPoint] = {}
    for node_id, lat, lon in node_rows:
        if node_id in geo_by_id:
            raise RoadFileError(f"duplicate node id {node_id!r}")
        if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
            raise RoadFileError(f"node {node_id!r} has out-of-range coordinates")
        geo_by_id[node_id] = GeoPoint(lat, lon)
    if not geo_by_id:
        raise RoadFileError("road file contains no nodes")

    if proj is None:
        proj = make_projection(geo_by_id.values())
    nodes = {
        nid: RoadNode(nid, project(g, proj), g) for nid, g in geo_by_id.items()
    }

    edges: dict[str, RoadEdge] = {}
    for decl_id, frm_id, to_id, oneway, name in edge_rows:
        if frm_id not in nodes or to_id not in nodes:
            raise RoadFileError(
                f"edge {decl_id!r} references missing node "
                f"{frm_id if frm_id not in nodes else to_id!r}"
            )
        if frm_id == to_id:
            raise RoadFileError(f"edge {decl_id!r} is a self-loop")
        directed = [(decl_id, frm_id, to_id)]
        if not oneway:
            directed.append((decl_id + "_r", to_id, frm_id))
        for eid, a_id, b_id in directed:
            if eid in edges:
                raise RoadFileError(f"duplicate edge id {eid!r}")
            edge = _make_edge(eid, nodes[a_id], nodes[b_id], name)
            if edge is not None:
                edges[eid] = edge

    adjacency: dict[str, list[str]] = {nid: [] for nid in nodes}
    for edge in edges.values():
        adjacency[edge.from_node].append(edge.id)
    for out in adjacency.values():
        out.sort()

    edge_list = [edges[eid] for eid in sorted(edges)]
    index = SpatialGrid(cell_size)
    for i, edge in enumerate(edge_list):
        index.insert(i, edge.a, edge.b)
    return RoadGraph(proj, nodes, edges, edge_list, adjacency, index)


def load_graph(
    source: str | Path,
    proj: Projection | None = None,
    cell_size: float = DEFAULT_CELL_SIZE,
) -> RoadGraph:
    """Load the line-oriented road file format.

    ``N <id> <lat> <lon>`` declares a node, ``E <id> <from> <to> <oneway:0|1>
    [name]`` declares a street (expanded to one or two directed edges).
    ``#`` starts a comment.
    """
    node_rows: list[tuple[str, float, float]] = []
    edge_rows: list[tuple[str, str, str, bool, str | None]] = []
    with open(source, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                if parts[0] == "N":
                    if len(parts) != 4:
                        raise ValueError("expected: N <id> <lat> <lon>")
                    node_rows.append((parts[1], float(parts[2]), float(parts[3])))
                elif parts[0] == "E":
                    if len(parts) < 5:
                        raise ValueError("expected: E <id> <from> <to> <oneway> [name]")
                    oneway_field = parts[4]
                    if oneway_field not in ("0", "1"):
                        raise ValueError(f"oneway must be 0 or 1, got {oneway_field!r}")
                    name = " ".join(parts[5:]) or None
                    edge_rows.append(
                        (parts[1], parts[2], parts[3], oneway_field == "1", name)
                    )
                else:
                    raise ValueError(f"unknown record type {parts[0]!r}")
            except ValueError as exc:
                raise RoadFileError(f"{source}:{lineno}: {exc}") from exc
    try:
        return build_graph(node_rows, edge_rows, proj=proj, cell_size=cell_size)
    except RoadFileError as exc:
        raise RoadFileError(f"{source}: {exc}") from exc


def edges_within(
    g: RoadGraph, p: PlanePoint, r: float
) -> list[tuple[str, float]]:
    """All edges with segment distance <= ``r`` of ``p``, with their distances."""
    if r <= 0:
        raise ValueError("radius must be positive")
    out = []
    edge_list = g.edge_list
    for idx in g.index.candidates(p, r):
        e = edge_list[idx]
        d, _, _ = dist_point_segment(p, e.a, e.b)
        if d <= r:
            out.append((e.id, d))
    return out


def _check_position(g: RoadGraph, pos: EdgePosition) -> RoadEdge:
    e = g.edges.get(pos.edge_id)
    if e is None:
        raise ValueError(f"unknown edge {pos.edge_id!r}")
    if not (0.0 <= pos.offset <= e.length + 1e-9):
        raise ValueError(f"offset {pos.offset} outside edge {pos.edge_id!r}")
    return e


def _dijkstra(
    g: RoadGraph, start: str, goal: str
) -> tuple[float, dict[str, str]] | None:
    """Node-to-node Dijkstra; returns (distance, incoming-edge map) or None.

    Adjacency lists are sorted by edge id and relaxations use strict
    improvement, so equal-cost ties resolve deterministically in favor of
    lexicographically smaller edge ids.
    """
    dist: dict[str, float] = {start: 0.0}
    pred: dict[str, str] = {}
    done: set[str] = set()
    heap: list[tuple[float, str]] = [(0.0, start)]
    adjacency = g.adjacency
    edges = g.edges
    while heap:
        d, u = heappop(heap)
        if u in done:
            continue
        done.add(u)
        if u == goal:
            return d, pred
        for eid in adjacency[u]:
            e = edges[eid]
            nd = d + e.length
            v = e.to_node
            if v not in done and nd < dist.get(v, math.inf):
                dist[v] = nd
                pred[v] = eid
                heappush(heap, (nd, v))
    return None


def _source_anchor(e: RoadEdge, offset: float) -> tuple[str, float, list[PathStep]]:
    """Node to start Dijkstra from, the cost already paid, and lead-in steps."""
    if offset <= 0.0:
        return e.from_node, 0.0, []
    if offset >= e.length:
        return e.to_node, 0.0, []
    return e.to_node, e.length - offset, [PathStep(e.id, offset, e.length)]


def _target_anchor(e: RoadEdge, offset: float) -> tuple[str, float, list[PathStep]]:
    if offset <= 0.0:
        return e.from_node, 0.0, []
    if offset >= e.length:
        return e.to_node, 0.0, []
    return e.from_node, offset, [PathStep(e.id, 0.0, offset)]


def shortest_path(g: RoadGraph, src: EdgePosition, dst: EdgePosition) -> Route | None:
    """Minimum-length directed path between two on-edge positions.

    Offsets 0 and edge-length are treated as standing at the corresponding
    node. Returns None when the destination is unreachable.
    """
    e_s = _check_position(g, src)
    e_t = _check_position(g, dst)

    best: Route | None = None
    if src.edge_id == dst.edge_id and dst.offset >= src.offset:
        best = Route(
            [PathStep(src.edge_id, src.offset, dst.offset)],
            dst.offset - src.offset,
        )

    start_node, lead_cost, lead = _source_anchor(e_s, src.offset)
    goal_node, tail_cost, tail = _target_anchor(e_t, dst.offset)
    found = _dijkstra(g, start_node, goal_node)
    if found is not None:
        node_dist, pred = found
        total = lead_cost + node_dist + tail_cost
        if best is None or total < best.length:
            middle: list[PathStep] = []
            node = goal_node
            while node != start_node:
                eid = pred[node]
                e = g.edges[eid]
                middle.append(PathStep(eid, 0.0, e.length))
                node = e.from_node
            middle.reverse()
            best = Route(lead + middle + tail, total)
    return best
