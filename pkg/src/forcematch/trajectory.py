"""GPS fix ingestion, anomaly cleaning, and trajectory working state.

Cleaning follows urban-taxi conventions: a segment driven faster than the
speed threshold starts an anomaly; short anomalies are deleted, medium ones
are bridged by linear interpolation, and long ones (or long silences) split
the track into separate trajectories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, NamedTuple

from .geo import GeoPoint, PlanePoint, Projection, dist, make_projection, project

# Reference bounding box for the ingestion filter (urban taxi dataset grid).
DEFAULT_BBOX = (41.8001, 41.9859, 12.382189, 12.608782)


class TrajectoryFileError(ValueError):
    """Raised when a trajectory file cannot be parsed."""


class GpsFix(NamedTuple):
    pos: GeoPoint
    t: float  # epoch seconds


class AnomalyInterval(NamedTuple):
    """Run of over-speed segments between fixes ``start`` and ``end``."""

    start: int  # index of the fix before the first fast segment
    end: int  # index of the fix after the last fast segment
    duration_s: float


@dataclass
class CleanConfig:
    speed_threshold_kmh: float = 50.0
    delete_max_s: float = 42.0  # below: delete points
    split_min_s: float = 480.0  # above: end of trajectory (also max silence)
    min_points: int = 10
    min_duration_s: float = 480.0
    bbox: tuple[float, float, float, float] | None = DEFAULT_BBOX  # lat0,lat1,lon0,lon1


@dataclass
class CleaningReport:
    points_in: int = 0
    points_deleted: int = 0
    points_interpolated: int = 0
    points_dropped: int = 0  # points inside dropped trajectories
    points_out: int = 0  # points in surviving trajectories (incl. interpolated)
    splits: int = 0
    trajectories_out: int = 0
    trajectories_dropped: int = 0

    def merge(self, other: "CleaningReport") -> None:
        self.points_in += other.points_in
        self.points_deleted += other.points_deleted
        self.points_interpolated += other.points_interpolated
        self.points_dropped += other.points_dropped
        self.points_out += other.points_out
        self.splits += other.splits
        self.trajectories_out += other.trajectories_out
        self.trajectories_dropped += other.trajectories_dropped

    def balanced(self) -> bool:
        """Every input or synthesized point ends up kept, deleted, or dropped."""
        return (
            self.points_in + self.points_interpolated
            == self.points_out + self.points_deleted + self.points_dropped
        )


@dataclass
class Trajectory:
    """Time-ordered fixes plus the mutable planar state used by the simulation.

    ``plane`` holds the working positions that force iterations displace;
    ``plane0`` and ``natural_len`` are captured once when the trajectory is
    bound to a projection and are never recomputed afterwards.
    """

    id: str
    fixes: list[GpsFix]
    interpolated: list[bool] = field(default_factory=list)
    interp_spans: list[tuple[int, int]] = field(default_factory=list)
    projection: Projection | None = None
    plane: list[PlanePoint] = field(default_factory=list)
    plane0: tuple[PlanePoint, ...] = ()
    natural_len: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if not self.fixes:
            raise ValueError("trajectory has no fixes")
        for a, b in zip(self.fixes, self.fixes[1:]):
            if b.t <= a.t:
                raise ValueError(f"trajectory {self.id}: fixes not strictly increasing in time")
        if not self.interpolated:
            self.interpolated = [False] * len(self.fixes)
        if len(self.interpolated) != len(self.fixes):
            raise ValueError("interpolated flags do not match fixes")

    def __len__(self) -> int:
        return len(self.fixes)

    @property
    def duration_s(self) -> float:
        return self.fixes[-1].t - self.fixes[0].t

    def bind(self, proj: Projection) -> "Trajectory":
        """Capture planar positions and spring natural lengths under ``proj``."""
        self.projection = proj
        self.plane0 = tuple(project(f.pos, proj) for f in self.fixes)
        self.plane = list(self.plane0)
        self.natural_len = tuple(
            dist(a, b) for a, b in zip(self.plane0, self.plane0[1:])
        )
        return self

    def rebound(self, proj: Projection) -> "Trajectory":
        """Fresh working copy bound to ``proj``; the original stays untouched."""
        return Trajectory(
            self.id, list(self.fixes), list(self.interpolated), list(self.interp_spans)
        ).bind(proj)


def polyline_length(t: Trajectory) -> float:
    """Length of the original GPS polyline (pre-simulation positions)."""
    plane0 = t.plane0
    if not plane0:
        proj = make_projection([f.pos for f in t.fixes])
        plane0 = tuple(project(f.pos, proj) for f in t.fixes)
    return sum(dist(a, b) for a, b in zip(plane0, plane0[1:]))


def _segment_speeds_kmh(fixes: list[GpsFix], proj: Projection) -> list[float]:
    pts = [project(f.pos, proj) for f in fixes]
    speeds = []
    for i in range(len(fixes) - 1):
        dt = fixes[i + 1].t - fixes[i].t
        d = dist(pts[i], pts[i + 1])
        speeds.append(math.inf if dt <= 0 else d / dt * 3.6)
    return speeds


def detect_anomalies(
    fixes: list[GpsFix],
    threshold_kmh: float = 50.0,
    proj: Projection | None = None,
    excused: Iterable[tuple[float, float]] = (),
) -> list[AnomalyInterval]:
    """Maximal runs of consecutive over-speed segments.

    Segments inside an ``excused`` time span (previously interpolated spans,
    which may legitimately be fast) are skipped.
    """
    if len(fixes) < 2:
        return []
    if proj is None:
        proj = make_projection([f.pos for f in fixes])
    speeds = _segment_speeds_kmh(fixes, proj)
    spans = list(excused)

    def is_excused(i: int) -> bool:
        t0, t1 = fixes[i].t, fixes[i + 1].t
        return any(s0 - 1e-9 <= t0 and t1 <= s1 + 1e-9 for s0, s1 in spans)

    out: list[AnomalyInterval] = []
    i = 0
    n = len(speeds)
    while i < n:
        if speeds[i] > threshold_kmh and not is_excused(i):
            j = i
            while j + 1 < n and speeds[j + 1] > threshold_kmh and not is_excused(j + 1):
                j += 1
            out.append(AnomalyInterval(i, j + 1, fixes[j + 1].t - fixes[i].t))
            i = j + 1
        else:
            i += 1
    return out


def _interpolate(a: GpsFix, b: GpsFix, times: list[float]) -> list[GpsFix]:
    out = []
    for t in times:
        frac = (t - a.t) / (b.t - a.t)
        out.append(
            GpsFix(
                GeoPoint(
                    a.pos.lat + frac * (b.pos.lat - a.pos.lat),
                    a.pos.lon + frac * (b.pos.lon - a.pos.lon),
                ),
                t,
            )
        )
    return out


def _clean_piece(
    fixes: list[GpsFix],
    interp: list[bool],
    spans: list[tuple[float, float]],
    cfg: CleanConfig,
    proj: Projection,
    report: CleaningReport,
) -> list[tuple[list[GpsFix], list[bool], list[tuple[float, float]]]]:
    """Resolve speed anomalies in one gap-free piece; may split it further."""
    while True:
        anomalies = detect_anomalies(fixes, cfg.speed_threshold_kmh, proj, spans)
        if not anomalies:
            return [(fixes, interp, spans)]
        i, k, duration = anomalies[0]
        if duration > cfg.split_min_s:
            # A long anomaly is a break: close the trajectory at its start.
            report.points_deleted += k - i - 1
            report.splits += 1
            left = (fixes[: i + 1], interp[: i + 1], spans)
            rest = _clean_piece(fixes[k:], interp[k:], list(spans), cfg, proj, report)
            return [left] + rest
        if duration >= cfg.delete_max_s:
            times = [f.t for f in fixes[i + 1 : k]]
            report.points_deleted += len(times)
            report.points_interpolated += len(times)
            filled = _interpolate(fixes[i], fixes[k], times)
            fixes = fixes[: i + 1] + filled + fixes[k:]
            interp = interp[: i + 1] + [True] * len(filled) + interp[k:]
            spans = spans + [(fixes[i].t, fixes[i + len(filled) + 1].t)]
        elif k - i > 1:
            report.points_deleted += k - i - 1
            fixes = fixes[: i + 1] + fixes[k:]
            interp = interp[: i + 1] + interp[k:]
        else:
            # Bare fast segment: drop its far endpoint (or the leading fix when
            # the run starts the track) and let re-detection escalate.
            drop = i if i == 0 else k
            report.points_deleted += 1
            fixes = fixes[:drop] + fixes[drop + 1 :]
            interp = interp[:drop] + interp[drop + 1 :]


def _in_bbox(fix: GpsFix, bbox: tuple[float, float, float, float]) -> bool:
    lat0, lat1, lon0, lon1 = bbox
    return lat0 <= fix.pos.lat <= lat1 and lon0 <= fix.pos.lon <= lon1


def clean(
    fixes: list[GpsFix],
    cfg: CleanConfig | None = None,
    vehicle_id: str = "0",
) -> tuple[list[Trajectory], CleaningReport]:
    """Apply the full cleaning pipeline to one vehicle's time-ordered fixes."""
    cfg = cfg or CleanConfig()
    report = CleaningReport(points_in=len(fixes))
    if not fixes:
        return [], report
    fixes = sorted(fixes, key=lambda f: f.t)
    proj = make_projection([f.pos for f in fixes])

    # Long silences end a trajectory regardless of speed.
    pieces: list[list[GpsFix]] = [[fixes[0]]]
    for prev, cur in zip(fixes, fixes[1:]):
        if cur.t - prev.t > cfg.split_min_s:
            report.splits += 1
            pieces.append([cur])
        elif cur.t == prev.t:
            report.points_deleted += 1  # duplicate timestamp
        else:
            pieces[-1].append(cur)

    resolved: list[tuple[list[GpsFix], list[bool], list[tuple[float, float]]]] = []
    for piece in pieces:
        resolved.extend(
            _clean_piece(piece, [False] * len(piece), [], cfg, proj, report)
        )

    trajectories: list[Trajectory] = []
    for piece_fixes, piece_interp, piece_spans in resolved:
        n = len(piece_fixes)
        duration = piece_fixes[-1].t - piece_fixes[0].t if n else 0.0
        keep = (
            n >= cfg.min_points
            and duration >= cfg.min_duration_s
            and (cfg.bbox is None or all(_in_bbox(f, cfg.bbox) for f in piece_fixes))
        )
        if not keep:
            report.trajectories_dropped += 1
            report.points_dropped += n
            continue
        index_spans = [
            (ti, tj)
            for ti, tj in (
                (_index_of_time(piece_fixes, s0), _index_of_time(piece_fixes, s1))
                for s0, s1 in piece_spans
            )
            if ti is not None and tj is not None
        ]
        traj = Trajectory(
            f"{vehicle_id}_{len(trajectories)}",
            piece_fixes,
            piece_interp,
            index_spans,
        )
        trajectories.append(traj)
        report.points_out += n
    report.trajectories_out = len(trajectories)
    return trajectories, report


def _index_of_time(fixes: list[GpsFix], t: float) -> int | None:
    for i, f in enumerate(fixes):
        if f.t == t:
            return i
    return None


def evaluation_filter(
    t: Trajectory,
    match_len: float,
    min_length_m: float = 300.0,
    index_range: tuple[float, float] = (0.8, 1.2),
) -> bool:
    """Comparative-evaluation inclusion rule: long enough and index in range."""
    if match_len < 0:
        raise ValueError("match_len must be non-negative")
    length = polyline_length(t)
    if length < min_length_m or length <= 0.0:
        return False
    index = match_len / length
    return index_range[0] <= index <= index_range[1]


def _parse_time(text: str) -> float:
    text = text.strip()
    try:
        return float(text)
    except ValueError:
        pass
    dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def format_time(t: float) -> str:
    return datetime.fromtimestamp(t, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def load_trajectories(source: str | Path) -> dict[str, list[GpsFix]]:
    """Load raw fixes grouped by vehicle id, time-sorted.

    Lines are ``vehicle_id, iso8601_timestamp, lat, lon`` with an optional
    header and an optional trailing ``interpolated`` column (ignored here).
    """
    by_vehicle: dict[str, list[GpsFix]] = {}
    with open(source, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            if lineno == 1 and parts[:4] == ["vehicle_id", "timestamp", "lat", "lon"]:
                continue
            if len(parts) not in (4, 5):
                raise TrajectoryFileError(f"{source}:{lineno}: expected 4 or 5 fields")
            try:
                fix = GpsFix(GeoPoint(float(parts[2]), float(parts[3])), _parse_time(parts[1]))
            except ValueError as exc:
                raise TrajectoryFileError(f"{source}:{lineno}: {exc}") from exc
            by_vehicle.setdefault(parts[0], []).append(fix)
    for fixes in by_vehicle.values():
        fixes.sort(key=lambda f: f.t)
    return by_vehicle


def write_trajectories(trajectories: Iterable[Trajectory], dest: str | Path) -> None:
    with open(dest, "w", encoding="utf-8") as fh:
        fh.write("vehicle_id,timestamp,lat,lon,interpolated\n")
        for t in trajectories:
            for fix, flag in zip(t.fixes, t.interpolated):
                fh.write(
                    f"{t.id},{format_time(fix.t)},{fix.pos.lat:.6f},"
                    f"{fix.pos.lon:.6f},{int(flag)}\n"
                )
