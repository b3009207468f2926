"""Finalization: place trajectory points exactly on the road network and
stitch them into a directed edge path.

Run on unperturbed points (zero force iterations) this is the routing-only
baseline; run after the simulation it converts the displaced points into the
final match. Both share this code so any comparison between the two isolates
the effect of the perturbation itself.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable

from .geo import GeoPoint, PlanePoint, dist_point_segment, unproject
from .roadnet import EdgePosition, PathStep, RoadGraph, Route, shortest_path
from .trajectory import Trajectory


class UnmatchableTrajectory(RuntimeError):
    """No point of the trajectory has any road candidate."""


# Distances below this are indistinguishable (GPS noise dwarfs them); the
# floor keeps alignment decisive when a point sits right on a junction where
# several streets all pass at distance ~0.
SCORE_DISTANCE_FLOOR = 1.0

# Snap offsets this close to an edge end onto the node itself, so routing
# never has to traverse a whole block to reach a position a few centimeters
# short of a junction from the wrong side.
OFFSET_NODE_EPS = 0.5


@dataclass
class SnapConfig:
    """How perturbed points are placed onto the network.

    The default mirrors plain route-based matching: the nearest candidate
    wins and alignment only breaks ties, so a point may anchor on a
    wrong-direction one-way road and routing then has to detour around the
    block to traverse it legally (it is the simulation's repulsion that
    clears such anchors, not the snapper). Set ``pure_nearest=False`` for a
    cosine-graded score ``d / max(cos, alignment_floor)`` that prefers
    direction-consistent roads outright, or ``require_alignment=True`` to
    drop wrong-direction candidates entirely.
    """

    radii: tuple[float, ...] = (25.0, 50.0, 100.0, 200.0)  # grows until a hit
    alignment_floor: float = 0.1  # cosine floor in the graded score
    pure_nearest: bool = True  # nearest candidate, alignment breaks ties only
    require_alignment: bool = False  # hard-drop candidates with cos < 0
    stride: int = 1  # route between every stride-th point

    def __post_init__(self) -> None:
        if not self.radii or any(r <= 0 for r in self.radii):
            raise ValueError("radii must be positive")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if not 0 < self.alignment_floor <= 1:
            raise ValueError("alignment_floor must be in (0, 1]")

    CONFIG_KEYS = {
        "snap_radii",
        "alignment_floor",
        "pure_nearest",
        "require_alignment",
        "snap_stride",
    }

    @classmethod
    def from_mapping(cls, mapping: dict[str, str]) -> "SnapConfig":
        kwargs: dict[str, object] = {}
        for key, raw in mapping.items():
            if key == "snap_radii":
                kwargs["radii"] = tuple(float(x) for x in raw.split(",") if x.strip())
            elif key == "alignment_floor":
                kwargs["alignment_floor"] = float(raw)
            elif key in ("pure_nearest", "require_alignment"):
                kwargs[key] = raw.strip().lower() in ("1", "true", "yes")
            elif key == "snap_stride":
                kwargs["stride"] = int(raw)
            else:
                raise ValueError(f"unknown snap config key {key!r}")
        return cls(**kwargs)


@dataclass(frozen=True)
class Candidate:
    edge_id: str
    foot: PlanePoint
    offset: float  # meters along the edge from its from-node
    d_s: float
    cos_theta: float


@dataclass
class MatchResult:
    trajectory_id: str
    path: list[PathStep]
    runs: list[tuple[int, int]]  # [start, end) slices of contiguous path
    snapped: list[tuple[str, PlanePoint]]  # per point: edge id and foot
    gaps: list[tuple[int, int]]  # point-index ranges where routing failed
    path_length: float

    @property
    def gap_count(self) -> int:
        return len(self.gaps)

    def edge_ids(self) -> list[str]:
        return [s.edge_id for s in self.path]


def candidates(
    p: PlanePoint,
    heading: tuple[float, float] | None,
    g: RoadGraph,
    radius: float,
    require_alignment: bool = False,
) -> list[Candidate]:
    """Edges within ``radius`` of ``p`` with foot point, offset, and alignment.

    With no usable heading every candidate gets cosine 1 (no alignment
    information). Sorted by distance, ties by edge id.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    out = []
    edge_list = g.edge_list
    for idx in g.index.candidates(p, radius):
        e = edge_list[idx]
        d_s, foot, _ = dist_point_segment(p, e.a, e.b)
        if d_s > radius:
            continue
        if heading is None:
            cos_theta = 1.0
        else:
            cos_theta = e.ux * heading[0] + e.uy * heading[1]
        if require_alignment and cos_theta < 0.0:
            continue
        offset = (foot.x - e.a.x) * e.ux + (foot.y - e.a.y) * e.uy
        offset = min(max(offset, 0.0), e.length)
        if offset < OFFSET_NODE_EPS:
            offset = 0.0
        elif offset > e.length - OFFSET_NODE_EPS:
            offset = e.length
        out.append(Candidate(e.id, foot, offset, d_s, cos_theta))
    out.sort(key=lambda c: (c.d_s, c.edge_id))
    return out


def _point_heading(t: Trajectory, i: int) -> tuple[float, float] | None:
    plane = t.plane
    lo = max(i - 1, 0)
    hi = min(i + 1, len(plane) - 1)
    vx = plane[hi].x - plane[lo].x
    vy = plane[hi].y - plane[lo].y
    n = math.hypot(vx, vy)
    if n < 1e-12:
        return None
    return vx / n, vy / n


def _best_candidate(
    p: PlanePoint,
    heading: tuple[float, float] | None,
    g: RoadGraph,
    cfg: SnapConfig,
) -> Candidate | None:
    for radius in cfg.radii:
        found = candidates(p, heading, g, radius, cfg.require_alignment)
        if not found:
            continue

        def score(c: Candidate) -> float:
            d = max(c.d_s, SCORE_DISTANCE_FLOOR)
            if cfg.pure_nearest:
                return d
            return d / max(c.cos_theta, cfg.alignment_floor)

        # Break score ties by better alignment, then edge id, for determinism.
        return min(found, key=lambda c: (score(c), -c.cos_theta, c.edge_id))
    return None


def _append_leg(path: list[PathStep], leg: Iterable[PathStep]) -> None:
    for step in leg:
        if path:
            last = path[-1]
            if last.edge_id == step.edge_id and math.isclose(
                last.exit, step.entry, abs_tol=1e-9
            ):
                # Continuation of the previous traversal on the same edge.
                if step.traversed > 0.0:
                    path[-1] = PathStep(last.edge_id, last.entry, step.exit)
                continue
        if step.traversed > 0.0:
            path.append(step)


def snap_route(t: Trajectory, g: RoadGraph, cfg: SnapConfig | None = None) -> MatchResult:
    """Snap every point to its best road candidate and join them by routing."""
    cfg = cfg or SnapConfig()
    if not t.plane:
        raise ValueError("trajectory is not bound to a projection")
    n = len(t)

    best: list[Candidate | None] = [
        _best_candidate(t.plane[i], _point_heading(t, i), g, cfg) for i in range(n)
    ]
    if all(c is None for c in best):
        raise UnmatchableTrajectory(f"unmatchable trajectory {t.id}")
    # Candidate-less points inherit the nearest snapped neighbor.
    last: Candidate | None = None
    for i in range(n):
        if best[i] is None:
            best[i] = last
        else:
            last = best[i]
    last = None
    for i in range(n - 1, -1, -1):
        if best[i] is None:
            best[i] = last
        else:
            last = best[i]

    anchors = list(range(0, n, cfg.stride))
    if anchors[-1] != n - 1:
        anchors.append(n - 1)

    path: list[PathStep] = []
    runs: list[tuple[int, int]] = []
    gaps: list[tuple[int, int]] = []
    run_start = 0
    for a, b in zip(anchors, anchors[1:]):
        ca, cb = best[a], best[b]
        leg = shortest_path(
            g,
            EdgePosition(ca.edge_id, ca.offset),
            EdgePosition(cb.edge_id, cb.offset),
        )
        if leg is None:
            gaps.append((a, b))
            if len(path) > run_start:
                runs.append((run_start, len(path)))
            run_start = len(path)
            continue
        _append_leg(path, leg.steps)
    if not path and not gaps:
        # Single point, or every leg zero-length: keep the snapped position.
        c = best[0]
        path.append(PathStep(c.edge_id, c.offset, c.offset))
    if len(path) > run_start:
        runs.append((run_start, len(path)))

    return MatchResult(
        trajectory_id=t.id,
        path=path,
        runs=runs,
        snapped=[(c.edge_id, c.foot) for c in best],  # type: ignore[union-attr]
        gaps=gaps,
        path_length=sum(s.traversed for s in path),
    )


def _step_endpoints(step: PathStep, g: RoadGraph) -> tuple[PlanePoint, PlanePoint]:
    e = g.edge(step.edge_id)
    return (
        PlanePoint(e.a.x + e.ux * step.entry, e.a.y + e.uy * step.entry),
        PlanePoint(e.a.x + e.ux * step.exit, e.a.y + e.uy * step.exit),
    )


def route_plane_segments(m: MatchResult, g: RoadGraph) -> list[tuple[PlanePoint, PlanePoint]]:
    """Traversed geometry as planar segments (zero-length steps excluded)."""
    out = []
    for step in m.path:
        a, b = _step_endpoints(step, g)
        if step.traversed > 0.0:
            out.append((a, b))
    return out


def route_geometry_runs(m: MatchResult, g: RoadGraph) -> list[list[GeoPoint]]:
    """Matched geometry as one polyline per contiguous run."""
    polylines = []
    for start, end in m.runs:
        coords: list[PlanePoint] = []
        for step in m.path[start:end]:
            a, b = _step_endpoints(step, g)
            if not coords or coords[-1] != a:
                coords.append(a)
            if coords[-1] != b:
                coords.append(b)
        if coords:
            polylines.append([unproject(p, g.projection) for p in coords])
    return polylines


def route_geometry(m: MatchResult, g: RoadGraph) -> list[GeoPoint]:
    """Matched route as a single polyline (runs concatenated across gaps)."""
    out: list[GeoPoint] = []
    for polyline in route_geometry_runs(m, g):
        for pt in polyline:
            if not out or out[-1] != pt:
                out.append(pt)
    return out


def _json_num(x: float) -> str:
    return f"{x:.6f}"


def to_geojson(m: MatchResult, t: Trajectory, g: RoadGraph) -> str:
    """GeoJSON FeatureCollection: matched route plus the original fixes.

    Numbers are fixed to six decimals so identical runs produce identical
    bytes.
    """
    route = route_geometry(m, g)
    route_coords = ",".join(
        "[" + _json_num(p.lon) + "," + _json_num(p.lat) + "]" for p in route
    )
    fix_coords = ",".join(
        "[" + _json_num(f.pos.lon) + "," + _json_num(f.pos.lat) + "]"
        for f in t.fixes
    )
    parts = [
        '{"type":"FeatureCollection","features":[',
        '{"type":"Feature",',
        '"geometry":{"type":"LineString","coordinates":[', route_coords, "]},",
        '"properties":{"trajectory_id":', json.dumps(m.trajectory_id),
        ',"path_length_m":', _json_num(m.path_length),
        ',"gap_count":', str(m.gap_count), "}},",
        '{"type":"Feature",',
        '"geometry":{"type":"MultiPoint","coordinates":[', fix_coords, "]},",
        '"properties":{"role":"original_fixes"}}',
        "]}",
    ]
    return "".join(parts)


def edge_csv_rows(m: MatchResult) -> list[str]:
    rows = ["trajectory_id,seq,edge_id,entry_offset_m,exit_offset_m"]
    for seq, step in enumerate(m.path):
        rows.append(
            f"{m.trajectory_id},{seq},{step.edge_id},"
            f"{step.entry:.6f},{step.exit:.6f}"
        )
    return rows
