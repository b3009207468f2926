"""Force-directed trajectory perturbation.

Each point of a trajectory feels an attraction (or repulsion) from every
road edge within a cutoff radius, plus log-displacement spring forces from
its neighbors. Points are displaced sequentially, one sweep per iteration;
the sequential in-place update order is part of the contract, so a single
trajectory's simulation must stay on one thread (different trajectories can
run concurrently against the shared immutable graph).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import NamedTuple

from .geo import PlanePoint, dist_point_line, dist_point_midpoint, dist_point_segment
from .roadnet import RoadEdge, RoadGraph
from .trajectory import Trajectory

DISTANCE_VARIANTS = ("line", "segment", "midpoint")
HEADING_VARIANTS = ("chord", "avg_of_cos", "cos_of_avg")
REPULSION_VARIANTS = ("half", "epsilon", "zero")
DIRECTION_VARIANTS = ("perpendicular", "midpoint")
FORCE_LAWS = ("inv_d", "inv_d2", "dp_over_d2", "inv_d_dm")
NATURAL_LENGTH_MODES = ("observed", "fixed")

REPULSION_EPSILON = -0.001


class ForceVector(NamedTuple):
    fx: float
    fy: float


ZERO_FORCE = ForceVector(0.0, 0.0)


@dataclass
class ForceConfig:
    """Simulation constants and variant selectors.

    The defaults are the tested combination: segment distance, chord heading,
    halved repulsion, perpendicular direction, and magnitude
    ``edge_constant * sqrt(length) * cos(theta) / d``.
    """

    edge_constant: float = 1.0  # electrical force scale
    spring_constant: float = 1.0
    step_size: float = 1.0  # meters of displacement per unit net force
    cutoff: float = 100.0  # edges beyond this exert no force
    iterations: int = 20
    max_step: float = 10.0  # displacement clamp per point per iteration
    min_distance: float = 1.0  # lower clamp on electrical distances
    distance_variant: str = "segment"
    heading_variant: str = "chord"
    repulsion_variant: str = "half"
    direction_variant: str = "perpendicular"
    force_law: str = "inv_d"
    natural_length_mode: str = "observed"
    fixed_natural_length: float = 100.0

    def __post_init__(self) -> None:
        for name, value in (
            ("edge_constant", self.edge_constant),
            ("spring_constant", self.spring_constant),
            ("step_size", self.step_size),
            ("cutoff", self.cutoff),
            ("max_step", self.max_step),
            ("min_distance", self.min_distance),
            ("fixed_natural_length", self.fixed_natural_length),
        ):
            if value <= 0:
                raise ValueError(f"{name} must be positive")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        for name, value, allowed in (
            ("distance_variant", self.distance_variant, DISTANCE_VARIANTS),
            ("heading_variant", self.heading_variant, HEADING_VARIANTS),
            ("repulsion_variant", self.repulsion_variant, REPULSION_VARIANTS),
            ("direction_variant", self.direction_variant, DIRECTION_VARIANTS),
            ("force_law", self.force_law, FORCE_LAWS),
            ("natural_length_mode", self.natural_length_mode, NATURAL_LENGTH_MODES),
        ):
            if value not in allowed:
                raise ValueError(f"{name} must be one of {allowed}, got {value!r}")

    @classmethod
    def field_names(cls) -> set[str]:
        return {f.name for f in fields(cls)}

    @classmethod
    def from_mapping(cls, mapping: dict[str, str]) -> "ForceConfig":
        kwargs: dict[str, object] = {}
        for key, raw in mapping.items():
            if key not in cls.field_names():
                raise ValueError(f"unknown config key {key!r}")
            if key == "iterations":
                kwargs[key] = int(raw)
            elif key in (
                "distance_variant",
                "heading_variant",
                "repulsion_variant",
                "direction_variant",
                "force_law",
                "natural_length_mode",
            ):
                kwargs[key] = raw
            else:
                kwargs[key] = float(raw)
        return cls(**kwargs)


def parse_key_value_file(source: str | Path) -> dict[str, str]:
    """Parse a line-oriented ``key = value`` file; ``#`` starts a comment."""
    out: dict[str, str] = {}
    with open(source, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{source}:{lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            key = key.strip()
            if key in out:
                raise ValueError(f"{source}:{lineno}: duplicate key {key!r}")
            out[key] = value.strip()
    return out


def _unit(vx: float, vy: float) -> tuple[float, float] | None:
    n = math.hypot(vx, vy)
    if n < 1e-12:
        return None
    return vx / n, vy / n


def heading(t: Trajectory, i: int) -> tuple[float, float]:
    """Unit travel direction at point ``i`` (chord between its neighbors).

    Endpoints fall back to their single adjacent segment. Raises ValueError
    when the chord has zero length (stationary duplicates).
    """
    if len(t) < 2:
        raise ValueError("undefined heading")
    plane = t.plane
    lo = max(i - 1, 0)
    hi = min(i + 1, len(plane) - 1)
    u = _unit(plane[hi].x - plane[lo].x, plane[hi].y - plane[lo].y)
    if u is None:
        raise ValueError("undefined heading")
    return u


def _segment_dirs(t: Trajectory, i: int) -> list[tuple[float, float]]:
    """Unit directions of the trajectory segments adjacent to point ``i``."""
    plane = t.plane
    dirs = []
    if i > 0:
        u = _unit(plane[i].x - plane[i - 1].x, plane[i].y - plane[i - 1].y)
        if u is not None:
            dirs.append(u)
    if i < len(plane) - 1:
        u = _unit(plane[i + 1].x - plane[i].x, plane[i + 1].y - plane[i].y)
        if u is not None:
            dirs.append(u)
    return dirs


def _cos_theta(t: Trajectory, i: int, e: RoadEdge, cfg: ForceConfig) -> float | None:
    """Alignment cosine between the edge and the trajectory at point ``i``."""
    if cfg.heading_variant == "chord":
        try:
            hx, hy = heading(t, i)
        except ValueError:
            return None
        return e.ux * hx + e.uy * hy
    dirs = _segment_dirs(t, i)
    if not dirs:
        return None
    cosines = [e.ux * ux + e.uy * uy for ux, uy in dirs]
    if cfg.heading_variant == "avg_of_cos":
        return sum(cosines) / len(cosines)
    angles = [math.acos(max(-1.0, min(1.0, c))) for c in cosines]
    return math.cos(sum(angles) / len(angles))


def electrical_force(
    t: Trajectory,
    i: int,
    e: RoadEdge,
    cfg: ForceConfig,
    d_s: float | None = None,
) -> ForceVector:
    """Attraction of point ``i`` toward edge ``e`` (negative away).

    ``d_s`` may be passed in when the caller already computed the segment
    distance during the radius query.
    """
    p = t.plane[i]
    if d_s is None:
        d_s, _, _ = dist_point_segment(p, e.a, e.b)
    cos_theta = _cos_theta(t, i, e, cfg)
    if cos_theta is None:
        return ZERO_FORCE
    if cos_theta < 0.0:
        if cfg.repulsion_variant == "half":
            cos_theta = cos_theta / 2.0
        elif cfg.repulsion_variant == "epsilon":
            cos_theta = REPULSION_EPSILON
        else:
            cos_theta = 0.0
    if cos_theta == 0.0:
        return ZERO_FORCE

    if cfg.distance_variant == "segment":
        d = d_s
    elif cfg.distance_variant == "line":
        d = dist_point_line(p, e.a, e.b)
    else:
        d = dist_point_midpoint(p, e.a, e.b)
    d = max(d, cfg.min_distance)

    scale = cfg.edge_constant * e.sqrt_length * cos_theta
    law = cfg.force_law
    if law == "inv_d":
        magnitude = scale / d
    elif law == "inv_d2":
        magnitude = scale / (d * d)
    elif law == "dp_over_d2":
        magnitude = scale * dist_point_line(p, e.a, e.b) / (d * d)
    else:  # inv_d_dm
        d_m = max(dist_point_midpoint(p, e.a, e.b), cfg.min_distance)
        magnitude = scale / (d * d_m)

    if cfg.direction_variant == "perpendicular":
        # Perpendicular foot on the edge's line (unclamped): beyond the edge
        # ends the pull stays lateral instead of dragging along the street.
        along = (p.x - e.a.x) * e.ux + (p.y - e.a.y) * e.uy
        target = PlanePoint(e.a.x + e.ux * along, e.a.y + e.uy * along)
    else:
        target = e.mid
    u = _unit(target.x - p.x, target.y - p.y)
    if u is None:  # point sits on the edge line: no usable direction
        return ZERO_FORCE
    return ForceVector(magnitude * u[0], magnitude * u[1])


def spring_force(t: Trajectory, i: int, neighbor: int, cfg: ForceConfig) -> ForceVector:
    """Log-displacement spring between point ``i`` and an adjacent point."""
    if neighbor not in (i - 1, i + 1) or not (0 <= neighbor < len(t)):
        raise ValueError("neighbor must be an adjacent point index")
    if cfg.natural_length_mode == "fixed":
        natural = cfg.fixed_natural_length
    else:
        natural = t.natural_len[min(i, neighbor)]
    if natural <= 0.0:
        return ZERO_FORCE
    p = t.plane[i]
    q = t.plane[neighbor]
    d = math.hypot(q.x - p.x, q.y - p.y)
    if d <= 0.0:
        return ZERO_FORCE
    magnitude = cfg.spring_constant * math.log(d / natural)
    return ForceVector(
        magnitude * (q.x - p.x) / d,
        magnitude * (q.y - p.y) / d,
    )


def _forces_at(
    t: Trajectory, i: int, g: RoadGraph, cfg: ForceConfig
) -> tuple[float, float, RoadEdge | None, float]:
    """(net fx, net fy, nearest in-cutoff edge, its segment distance)."""
    p = t.plane[i]
    fx = fy = 0.0
    nearest: RoadEdge | None = None
    nearest_d = math.inf
    cutoff = cfg.cutoff
    edge_list = g.edge_list
    for idx in g.index.candidates(p, cutoff):
        e = edge_list[idx]
        d_s, _, _ = dist_point_segment(p, e.a, e.b)
        if d_s > cutoff:
            continue
        if d_s < nearest_d:
            nearest_d = d_s
            nearest = e
        f = electrical_force(t, i, e, cfg, d_s=d_s)
        fx += f.fx
        fy += f.fy
    for neighbor in (i - 1, i + 1):
        if 0 <= neighbor < len(t):
            f = spring_force(t, i, neighbor, cfg)
            fx += f.fx
            fy += f.fy
    return fx, fy, nearest, nearest_d


def net_force(t: Trajectory, i: int, g: RoadGraph, cfg: ForceConfig) -> ForceVector:
    """Sum of in-cutoff electrical forces and neighbor spring forces."""
    fx, fy, _, _ = _forces_at(t, i, g, cfg)
    return ForceVector(fx, fy)


def step_point(t: Trajectory, i: int, g: RoadGraph, cfg: ForceConfig) -> tuple[float, float]:
    """Displace point ``i`` by the clamped net force; returns the displacement.

    Besides the configured ``max_step``, the step is capped at the current
    distance to the nearest road: the inverse-distance attraction otherwise
    overshoots across nearby roads and the point ping-pongs around the line
    it should settle on instead of converging.
    """
    fx, fy, _, nearest_d = _forces_at(t, i, g, cfg)
    dx = cfg.step_size * fx
    dy = cfg.step_size * fy
    cap = min(cfg.max_step, nearest_d)
    norm = math.hypot(dx, dy)
    if norm > cap:
        shrink = cap / norm
        dx *= shrink
        dy *= shrink
    p = t.plane[i]
    t.plane[i] = PlanePoint(p.x + dx, p.y + dy)
    return dx, dy


def run_simulation(t: Trajectory, g: RoadGraph, cfg: ForceConfig) -> list[float]:
    """Run the displacement loop; returns mean displacement per iteration.

    With ``iterations == 0`` the trajectory is left untouched (this is the
    routing-only baseline). Points are updated in place, in index order,
    within each iteration.
    """
    if not t.plane:
        raise ValueError("trajectory is not bound to a projection")
    trace: list[float] = []
    n = len(t)
    for _ in range(cfg.iterations):
        moved = 0.0
        for i in range(n):
            dx, dy = step_point(t, i, g, cfg)
            moved += math.hypot(dx, dy)
        trace.append(moved / n)
    return trace
