"""Synthetic grid cities, sampled drives, and noisy GPS fixes.

The generator supplies what real taxi data cannot: a known true edge path
for every trajectory. Everything is a pure function of the config seed.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .geo import GeoPoint, METERS_PER_DEG_LAT
from .roadnet import RoadGraph, build_graph
from .trajectory import GpsFix, format_time

NodeRow = tuple[str, float, float]
StreetRow = tuple[str, str, str, bool, str | None]

BASE_EPOCH = 1_600_000_000.0  # arbitrary fixed origin for synthetic timestamps


@dataclass
class SynthConfig:
    grid_n: int = 15  # junctions per side
    block_m: float = 120.0  # junction spacing
    segments_per_block: int = 4  # street pieces per block (~30 m segments)
    oneway_fraction: float = 0.3  # single-direction streets
    dual_fraction: float = 0.25  # divided streets: opposite one-way carriageways
    carriageway_gap_m: float = 16.0  # lateral separation of a divided street
    noise_sigma: float = 20.0  # meters, per axis
    sample_interval_s: float = 15.0
    speed_mps: float = 8.0
    seed: int = 0
    n_trajectories: int = 200
    route_min_m: float = 1400.0
    jitter_fraction: float = 0.25  # junction scatter, fraction of block_m
    bend_fraction: float = 0.06  # street curviness, fraction of block_m
    center: GeoPoint = GeoPoint(41.89, 12.49)

    def __post_init__(self) -> None:
        if self.grid_n < 2:
            raise ValueError("grid_n must be >= 2")
        for name, value in (
            ("block_m", self.block_m),
            ("sample_interval_s", self.sample_interval_s),
            ("speed_mps", self.speed_mps),
            ("route_min_m", self.route_min_m),
        ):
            if value <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.oneway_fraction <= 1.0:
            raise ValueError("oneway_fraction must be in [0, 1]")
        if not 0.0 <= self.dual_fraction <= 1.0 - self.oneway_fraction:
            raise ValueError("dual_fraction must be in [0, 1 - oneway_fraction]")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not 0.0 <= self.jitter_fraction <= 0.3:
            raise ValueError("jitter_fraction must be in [0, 0.3]")
        if self.segments_per_block < 1:
            raise ValueError("segments_per_block must be >= 1")
        if not 0.0 <= self.bend_fraction <= 0.15:
            raise ValueError("bend_fraction must be in [0, 0.15]")

    FIELD_PARSERS = {
        "grid_n": int,
        "block_m": float,
        "segments_per_block": int,
        "oneway_fraction": float,
        "dual_fraction": float,
        "carriageway_gap_m": float,
        "noise_sigma": float,
        "sample_interval_s": float,
        "speed_mps": float,
        "seed": int,
        "n_trajectories": int,
        "route_min_m": float,
        "jitter_fraction": float,
        "bend_fraction": float,
    }

    @classmethod
    def from_mapping(cls, mapping: dict[str, str]) -> "SynthConfig":
        kwargs: dict[str, object] = {}
        for key, raw in mapping.items():
            parser = cls.FIELD_PARSERS.get(key)
            if parser is None:
                raise ValueError(f"unknown synth config key {key!r}")
            kwargs[key] = parser(raw)
        return cls(**kwargs)


@dataclass
class SynthCase:
    graph: RoadGraph = field(repr=False)
    truth: list[str]  # directed edge ids actually driven
    fixes: list[GpsFix]


def grid_rows(cfg: SynthConfig) -> tuple[list[NodeRow], list[StreetRow]]:
    """Node and street declarations for the grid city (road-file records).

    Junctions sit on a lattice scattered by ``jitter_fraction`` of a block,
    and every street between two junctions is subdivided into
    ``segments_per_block`` straight pieces whose shape points wobble sideways
    by ``bend_fraction``: the result is irregularly angled, gently curved
    streets rather than a perfect lattice, with road-file segments of about
    ``block_m / segments_per_block`` meters.
    """
    rng = random.Random(f"{cfg.seed}/grid")
    n = cfg.grid_n
    half = (n - 1) / 2.0
    jit = cfg.jitter_fraction

    junction: dict[tuple[int, int], tuple[float, float]] = {}
    for r in range(n):
        for c in range(n):
            junction[(r, c)] = (
                (c - half + rng.uniform(-jit, jit)) * cfg.block_m,
                (r - half + rng.uniform(-jit, jit)) * cfg.block_m,
            )

    nodes: list[NodeRow] = []
    streets: list[StreetRow] = []
    m_lat = METERS_PER_DEG_LAT
    m_lon = m_lat * math.cos(math.radians(cfg.center.lat))

    def add_node(nid: str, x: float, y: float) -> None:
        nodes.append((nid, cfg.center.lat + y / m_lat, cfg.center.lon + x / m_lon))

    for (r, c), (x, y) in sorted(junction.items()):
        add_node(f"n{r}_{c}", x, y)

    def shape_chain(sid: str, a_id, b_id, ax, ay, bx, by, lateral: float) -> list[str]:
        """Node chain from a to b with bent interior shape points."""
        spb = cfg.segments_per_block
        ux, uy = bx - ax, by - ay
        norm = math.hypot(ux, uy)
        nx, ny = -uy / norm, ux / norm
        chain = [a_id]
        for k in range(1, spb):
            frac = k / spb
            off = lateral + rng.uniform(-cfg.bend_fraction, cfg.bend_fraction) * cfg.block_m
            mid_id = f"{sid}m{k}"
            add_node(mid_id, ax + ux * frac + nx * off, ay + uy * frac + ny * off)
            chain.append(mid_id)
        chain.append(b_id)
        return chain

    def emit(sid: str, chain: list[str], oneway: bool, reverse: bool) -> None:
        for k in range(len(chain) - 1):
            frm, to = chain[k], chain[k + 1]
            if reverse:
                frm, to = chain[k + 1], chain[k]
            streets.append((f"{sid}s{k}", frm, to, oneway, None))

    def declare_street(sid: str, a_id: str, b_id: str, ax, ay, bx, by) -> None:
        """One block street: plain two-way, single one-way, or divided pair."""
        draw = rng.random()
        if draw < cfg.oneway_fraction:
            reverse = rng.random() < 0.5
            emit(sid, shape_chain(sid, a_id, b_id, ax, ay, bx, by, 0.0), True, reverse)
        elif draw < cfg.oneway_fraction + cfg.dual_fraction:
            # divided street: two opposite one-way carriageways that share
            # the end junctions but run offset from the street axis
            half = cfg.carriageway_gap_m / 2.0
            emit(
                f"{sid}a",
                shape_chain(f"{sid}a", a_id, b_id, ax, ay, bx, by, half),
                True,
                False,
            )
            emit(
                f"{sid}b",
                shape_chain(f"{sid}b", a_id, b_id, ax, ay, bx, by, -half),
                True,
                True,
            )
        else:
            emit(sid, shape_chain(sid, a_id, b_id, ax, ay, bx, by, 0.0), False, False)

    for r in range(n):
        for c in range(n - 1):
            ax, ay = junction[(r, c)]
            bx, by = junction[(r, c + 1)]
            declare_street(f"h{r}_{c}", f"n{r}_{c}", f"n{r}_{c + 1}", ax, ay, bx, by)
    for r in range(n - 1):
        for c in range(n):
            ax, ay = junction[(r, c)]
            bx, by = junction[(r + 1, c)]
            declare_street(f"v{r}_{c}", f"n{r}_{c}", f"n{r + 1}_{c}", ax, ay, bx, by)
    return nodes, streets


def gen_grid(cfg: SynthConfig) -> RoadGraph:
    nodes, streets = grid_rows(cfg)
    return build_graph(nodes, streets)


WAYWARD_PROB = 0.02  # chance of a non-shortest turn at each junction


def _distances_to(g: RoadGraph, dest: str) -> dict[str, float]:
    """Shortest-path distance from every node to ``dest`` (reverse Dijkstra)."""
    import heapq

    rev: dict[str, list[RoadEdge]] = {}
    for e in g.edge_list:
        rev.setdefault(e.to_node, []).append(e)
    dist = {dest: 0.0}
    heap = [(0.0, dest)]
    done: set[str] = set()
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        for e in rev.get(u, ()):
            nd = d + e.length
            if nd < dist.get(e.from_node, math.inf):
                dist[e.from_node] = nd
                heapq.heappush(heap, (nd, e.from_node))
    return dist


def _walk(g: RoadGraph, rng: random.Random, target_m: float, start: str) -> list[str]:
    """Chained shortest-path trips toward random destinations.

    Drivers mostly follow the shortest route to the current destination with
    an occasional wayward turn (no immediate backtracking); a new destination
    is drawn whenever one is reached, until the route is long enough.
    """
    node_ids = sorted(g.nodes)
    route: list[str] = []
    node = start
    prev_node: str | None = None
    length = 0.0
    dest = node
    to_dest: dict[str, float] = {}
    steps = 0
    limit = int(100 * (target_m / 10.0 + 10))
    while length < target_m and steps < limit:
        steps += 1
        if node == dest or node not in to_dest:
            dest = rng.choice(node_ids)
            to_dest = _distances_to(g, dest)
            continue
        options = [
            eid for eid in g.adjacency[node] if g.edge(eid).to_node != prev_node
        ]
        if not options:
            options = list(g.adjacency[node])  # dead end: U-turn allowed
        if not options:
            break

        def remaining(eid: str) -> float:
            e = g.edge(eid)
            return e.length + to_dest.get(e.to_node, math.inf)

        options.sort(key=lambda eid: (remaining(eid), eid))
        if math.isinf(remaining(options[0])):
            dest = node  # destination unreachable: draw a new one
            continue
        if len(options) > 1 and rng.random() < WAYWARD_PROB:
            eid = rng.choice(options[1:])
        else:
            eid = options[0]
        edge = g.edge(eid)
        route.append(eid)
        length += edge.length
        prev_node = node
        node = edge.to_node
    return route


def gen_route(
    g: RoadGraph,
    cfg: SynthConfig,
    case_index: int = 0,
    force_loop: bool = False,
    max_retries: int = 20,
) -> list[str]:
    """Seeded random drive through the city; deterministic per (seed, index).

    ``force_loop`` threads the drive around one city block so some junction
    is visited twice.
    """
    rng = random.Random(f"{cfg.seed}/route/{case_index}")
    node_ids = sorted(g.nodes)
    for _ in range(max_retries):
        start = rng.choice(node_ids)
        route = _walk(g, rng, cfg.route_min_m, start)
        if not route:
            continue
        if force_loop:
            looped = _insert_block_loop(g, route, rng)
            if looped is None:
                continue
            route = looped
        return route
    raise RuntimeError("could not generate a route; graph too disconnected")


def _street_chain(g: RoadGraph, sid: str, start: str) -> list[str] | None:
    """Directed edge chain traversing street ``sid`` from junction ``start``."""
    pieces = {
        eid for eid in g.edges if eid.startswith(sid + "s")
    }
    chain: list[str] = []
    node = start
    while pieces:
        step = None
        for eid in sorted(pieces):
            if g.edge(eid).from_node == node:
                step = eid
                break
        if step is None:
            return None
        twin = step[:-2] if step.endswith("_r") else step + "_r"
        pieces.discard(step)
        pieces.discard(twin)
        chain.append(step)
        node = g.edge(step).to_node
    return chain or None


def _insert_block_loop(
    g: RoadGraph, route: list[str], rng: random.Random
) -> list[str] | None:
    """Splice a circuit around one city block at some junction of the route."""
    positions = [
        pos for pos in range(len(route)) if g.edge(route[pos]).to_node.startswith("n")
    ]
    rng.shuffle(positions)
    for pos in positions:
        x = g.edge(route[pos]).to_node
        r, c = (int(v) for v in x[1:].split("_"))
        # around the block north-east of x: up, right, down, left
        legs = (
            (f"v{r}_{c}", f"n{r}_{c}"),
            (f"h{r + 1}_{c}", f"n{r + 1}_{c}"),
            (f"v{r}_{c + 1}", f"n{r + 1}_{c + 1}"),
            (f"h{r}_{c}", f"n{r}_{c + 1}"),
        )
        cycle: list[str] = []
        for sid, start in legs:
            if start not in g.nodes:
                cycle = []
                break
            chain = _street_chain(g, sid, start)
            if chain is None:
                cycle = []
                break
            cycle.extend(chain)
        if cycle:
            return route[: pos + 1] + cycle + route[pos + 1 :]
    return None


def route_length(g: RoadGraph, route: Sequence[str]) -> float:
    return sum(g.edge(eid).length for eid in route)


def sample_gps(
    g: RoadGraph,
    truth: Sequence[str],
    cfg: SynthConfig,
    case_index: int = 0,
) -> list[GpsFix]:
    """Constant-speed drive along ``truth``, sampled and jittered.

    Produces ``ceil(route_len / (speed * interval)) + 1`` fixes; the last one
    sits exactly at the route end.
    """
    if not truth:
        raise ValueError("truth path is empty")
    rng = random.Random(f"{cfg.seed}/noise/{case_index}")
    total = route_length(g, truth)
    step_m = cfg.speed_mps * cfg.sample_interval_s
    count = math.ceil(total / step_m) + 1

    # cumulative arc length table over the truth edges
    bounds = [0.0]
    for eid in truth:
        bounds.append(bounds[-1] + g.edge(eid).length)

    def position(s: float) -> tuple[float, float]:
        s = min(max(s, 0.0), total)
        # find edge containing arc length s
        lo, hi = 0, len(truth) - 1
        while lo < hi:
            mid = (lo + hi) // 2
            if bounds[mid + 1] < s:
                lo = mid + 1
            else:
                hi = mid
        e = g.edge(truth[lo])
        along = s - bounds[lo]
        return e.a.x + e.ux * along, e.a.y + e.uy * along

    proj = g.projection
    base = BASE_EPOCH + case_index * 1_000_000.0
    fixes = []
    for k in range(count):
        x, y = position(k * step_m)
        if cfg.noise_sigma > 0:
            x += rng.gauss(0.0, cfg.noise_sigma)
            y += rng.gauss(0.0, cfg.noise_sigma)
        lat = proj.origin.lat + y / proj.meters_per_deg_lat
        lon = proj.origin.lon + x / proj.meters_per_deg_lon
        fixes.append(GpsFix(GeoPoint(lat, lon), base + k * cfg.sample_interval_s))
    return fixes


def gen_case(
    g: RoadGraph, cfg: SynthConfig, case_index: int, force_loop: bool = False
) -> SynthCase:
    truth = gen_route(g, cfg, case_index, force_loop=force_loop)
    return SynthCase(g, truth, sample_gps(g, truth, cfg, case_index))


def gen_benchmark(cfg: SynthConfig) -> tuple[RoadGraph, list[SynthCase]]:
    g = gen_grid(cfg)
    return g, [gen_case(g, cfg, k) for k in range(cfg.n_trajectories)]


def write_road_file(
    dest: str | Path, nodes: Sequence[NodeRow], streets: Sequence[StreetRow]
) -> None:
    with open(dest, "w", encoding="utf-8") as fh:
        fh.write("# synthetic grid city\n")
        for nid, lat, lon in nodes:
            fh.write(f"N {nid} {lat:.8f} {lon:.8f}\n")
        for sid, a, b, oneway, name in streets:
            suffix = f" {name}" if name else ""
            fh.write(f"E {sid} {a} {b} {int(oneway)}{suffix}\n")


def write_truth_file(dest: str | Path, cases: dict[str, Sequence[str]]) -> None:
    with open(dest, "w", encoding="utf-8") as fh:
        fh.write("trajectory_id,seq,edge_id\n")
        for tid in sorted(cases):
            for seq, eid in enumerate(cases[tid]):
                fh.write(f"{tid},{seq},{eid}\n")


def load_truth_file(source: str | Path) -> dict[str, list[str]]:
    out: dict[str, list[tuple[int, str]]] = {}
    with open(source, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#") or line.startswith("trajectory_id"):
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 3:
                raise ValueError(f"{source}:{lineno}: expected 3 fields")
            out.setdefault(parts[0], []).append((int(parts[1]), parts[2]))
    return {
        tid: [eid for _, eid in sorted(entries)] for tid, entries in out.items()
    }


def write_fixes_csv(dest: str | Path, fixes_by_id: dict[str, Sequence[GpsFix]]) -> None:
    with open(dest, "w", encoding="utf-8") as fh:
        fh.write("vehicle_id,timestamp,lat,lon\n")
        for tid in sorted(fixes_by_id):
            for fix in fixes_by_id[tid]:
                fh.write(
                    f"{tid},{format_time(fix.t)},{fix.pos.lat:.8f},{fix.pos.lon:.8f}\n"
                )
