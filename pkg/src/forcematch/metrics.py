"""Ground-truth-free match quality metrics, plus edge-set scores for
synthetic cases where the true path is known.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .geo import dist_point_segment
from .roadnet import RoadGraph
from .snapper import MatchResult, route_plane_segments
from .trajectory import Trajectory, polyline_length

LENGTH_BUCKET_M = 5000.0
POINT_BUCKET = 200


@dataclass
class EvalReport:
    trajectory_id: str
    length_index: float
    avg_error_m: float
    runtime_s: float
    iterations: int
    gap_count: int
    traj_length_m: float
    n_points: int


def length_index(t: Trajectory, m: MatchResult) -> float:
    """Matched route length over original polyline length (ideal: 1)."""
    denom = polyline_length(t)
    if denom <= 0.0:
        raise ValueError("zero polyline length")
    return m.path_length / denom


def avg_error(
    t: Trajectory,
    m: MatchResult,
    g: RoadGraph,
    include_interpolated: bool = True,
) -> float:
    """Mean distance of the original GPS points to the matched path.

    Uses the pre-simulation positions, never the perturbed ones, so results
    are comparable across iteration counts.
    """
    segments = route_plane_segments(m, g)
    if not segments:
        raise ValueError("empty path")
    if not t.plane0:
        raise ValueError("trajectory is not bound to a projection")
    total = 0.0
    count = 0
    for i, p in enumerate(t.plane0):
        if not include_interpolated and t.interpolated[i]:
            continue
        best = min(dist_point_segment(p, a, b)[0] for a, b in segments)
        total += best
        count += 1
    if count == 0:
        raise ValueError("no points to evaluate")
    return total / count


def ground_truth_scores(
    m: MatchResult, truth: Sequence[str], g: RoadGraph
) -> tuple[float, float, float]:
    """(edge precision, edge recall, matched/truth length ratio)."""
    if not truth:
        raise ValueError("truth path is empty")
    matched = {s.edge_id for s in m.path if s.traversed > 0.0}
    truth_set = set(truth)
    common = matched & truth_set
    precision = len(common) / len(matched) if matched else 0.0
    recall = len(common) / len(truth_set)
    truth_length = sum(g.edge(eid).length for eid in truth_set)
    ratio = m.path_length / truth_length if truth_length > 0 else 0.0
    return precision, recall, ratio


@dataclass
class Summary:
    n: int
    mean_length_index: float
    mean_avg_error_m: float
    mean_runtime_s: float
    mean_abs_index_dev: float  # mean |length_index - 1|
    by_length: dict[int, tuple[int, float, float]] = field(default_factory=dict)
    by_points: dict[int, tuple[int, float, float]] = field(default_factory=dict)


def _bucket_means(
    reports: Sequence[EvalReport], key
) -> dict[int, tuple[int, float, float]]:
    buckets: dict[int, list[EvalReport]] = {}
    for r in reports:
        buckets.setdefault(key(r), []).append(r)
    return {
        b: (
            len(rs),
            sum(r.length_index for r in rs) / len(rs),
            sum(r.avg_error_m for r in rs) / len(rs),
        )
        for b, rs in sorted(buckets.items())
    }


def aggregate(reports: Sequence[EvalReport]) -> Summary:
    """Unweighted per-trajectory means plus bucketed distributions."""
    if not reports:
        raise ValueError("no reports to aggregate")
    n = len(reports)
    return Summary(
        n=n,
        mean_length_index=sum(r.length_index for r in reports) / n,
        mean_avg_error_m=sum(r.avg_error_m for r in reports) / n,
        mean_runtime_s=sum(r.runtime_s for r in reports) / n,
        mean_abs_index_dev=sum(abs(r.length_index - 1.0) for r in reports) / n,
        by_length=_bucket_means(
            reports, lambda r: int(r.traj_length_m // LENGTH_BUCKET_M)
        ),
        by_points=_bucket_means(reports, lambda r: int(r.n_points // POINT_BUCKET)),
    )


def identical_path_share(
    a: Iterable[MatchResult], b: Iterable[MatchResult]
) -> float:
    """Fraction of trajectory ids matched to the same edge sequence by both."""
    by_id_a = {m.trajectory_id: m.edge_ids() for m in a}
    by_id_b = {m.trajectory_id: m.edge_ids() for m in b}
    common = sorted(set(by_id_a) & set(by_id_b))
    if not common:
        raise ValueError("nothing to compare")
    same = sum(1 for tid in common if by_id_a[tid] == by_id_b[tid])
    return same / len(common)


REPORT_HEADER = (
    "trajectory_id,config_label,iterations,length_index,avg_error_m,runtime_s,gap_count"
)


def report_csv_rows(reports: Sequence[EvalReport], config_label: str) -> list[str]:
    rows = [REPORT_HEADER]
    for r in sorted(reports, key=lambda r: r.trajectory_id):
        rows.append(
            f"{r.trajectory_id},{config_label},{r.iterations},"
            f"{r.length_index:.6f},{r.avg_error_m:.6f},{r.runtime_s:.6f},{r.gap_count}"
        )
    return rows
