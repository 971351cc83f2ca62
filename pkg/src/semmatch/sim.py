"""Synthetic ground truth and noise injection for desk-scale experiments.

Generates grid road networks with Poisson-placed landmarks, drives random
routes over them at 1 Hz, emits semantic detections by sampling the detector
confusion matrix, and corrupts positions per a noise regime (coarse cellular,
bouncy network-based, or sparse GPS).  Everything is deterministic under a
fixed seed, and truth data is never mutated, so tests can audit any draw.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from semmatch.metrics import SegmentPath
from semmatch.preprocess import RawFix, SensorSample
from semmatch.roadnet import (
    LANDMARK_TYPES,
    METERS_PER_DEG_LAT,
    GeoPoint,
    RoadNetwork,
    RoadSegment,
    SemanticLandmark,
    SemanticType,
    geodesic_distance,
    norm_deg,
)
from semmatch.semantics import DETECTED_TYPES, ConfusionMatrix, SemanticEvent, build_confusion

# Mean of |N(0, sigma^2)|^2-norm noise (Rayleigh): mean = sigma * sqrt(pi/2).
RAYLEIGH_MEAN_FACTOR = math.sqrt(math.pi / 2.0)

# Landmark class frequencies default to the calibration drive class totals.
DEFAULT_TYPE_MIX = np.array([27, 37, 33, 14, 15, 55, 12], dtype=float)
DEFAULT_TYPE_MIX /= DEFAULT_TYPE_MIX.sum()

DEFAULT_ORIGIN = GeoPoint(30.0, 31.0)


@dataclass(frozen=True)
class NoiseModel:
    """One positioning regime: error scale, update density, ping-pong rate."""

    name: str
    err_mean_m: float
    updates_per_km: float
    pingpong_prob: float = 0.0
    pingpong_depth: int = 2

    def __post_init__(self):
        if self.err_mean_m < 0.0:
            raise ValueError("err_mean_m must be non-negative")
        if self.updates_per_km <= 0.0:
            raise ValueError("updates_per_km must be positive")
        if not 0.0 <= self.pingpong_prob < 1.0:
            raise ValueError("pingpong_prob must be in [0, 1)")
        if self.pingpong_depth < 1:
            raise ValueError("pingpong_depth must be >= 1")


# Cell-tower-only positioning is kilometers off and sparse; network (cellular
# plus WiFi) positioning is denser but bounces between sources; power-save GPS
# is accurate but extremely sparse.
NOISE_PRESETS: dict[str, NoiseModel] = {
    "cellular": NoiseModel("cellular", err_mean_m=1900.0, updates_per_km=1.4),
    "network": NoiseModel(
        "network", err_mean_m=162.0, updates_per_km=6.8, pingpong_prob=0.25, pingpong_depth=2
    ),
    "gps_sparse": NoiseModel("gps_sparse", err_mean_m=19.0, updates_per_km=0.6),
}


@dataclass(frozen=True)
class TruthFix:
    """Dense ground-truth sample along a simulated drive."""

    t: float
    loc: GeoPoint
    heading_deg: float
    speed_mps: float


@dataclass(frozen=True)
class Traversal:
    """One full pass over a segment during a route."""

    segment_id: str
    ascending: bool  # traveling in the direction of increasing offset
    speed_mps: float
    t_enter: float
    t_exit: float
    length_m: float


@dataclass(frozen=True)
class RouteTruth:
    """A sampled route: segment path, traversal schedule, 1 Hz truth fixes."""

    path: SegmentPath
    traversals: tuple[Traversal, ...]
    fixes: tuple[TruthFix, ...]
    total_time_s: float
    truncated: bool  # route ended early (dead end before requested length)


@dataclass(frozen=True)
class EventAudit:
    """Ground truth for one landmark passage, kept for every draw."""

    t: float
    segment_id: str
    offset_m: float
    true_type: SemanticType
    detected_type: SemanticType  # NO_CLASS means the event was dropped


@dataclass(frozen=True)
class SimTrace:
    """A complete simulated drive with its audit trail."""

    truth_path: SegmentPath
    truth_fixes: tuple[TruthFix, ...]
    observations: tuple[SemanticEvent, ...]
    raw_fixes: tuple[RawFix, ...]
    injected_outlier_indices: tuple[int, ...]
    event_audit: tuple[EventAudit, ...]


def _offset_point(p: GeoPoint, east_m: float, north_m: float) -> GeoPoint:
    lat = p.lat + north_m / METERS_PER_DEG_LAT
    lon = p.lon + east_m / (METERS_PER_DEG_LAT * math.cos(math.radians(p.lat)))
    return GeoPoint(lat, lon)


def generate_network(
    rows: int,
    cols: int,
    segment_len_m: float,
    density_per_km: float,
    type_mix: Optional[Sequence[float]] = None,
    seed: int = 0,
    origin: GeoPoint = DEFAULT_ORIGIN,
) -> RoadNetwork:
    """Grid road network with Poisson-placed landmarks.

    ``rows`` x ``cols`` nodes joined by straight segments of roughly
    ``segment_len_m``.  Each segment draws Poisson(density * length) landmarks
    at uniform offsets, with types sampled from ``type_mix`` over the seven
    landmark classes.
    """
    if rows < 1 or cols < 1 or (rows == 1 and cols == 1):
        raise ValueError("grid must contain at least one segment")
    if segment_len_m <= 0.0:
        raise ValueError("segment_len_m must be positive")
    if density_per_km < 0.0:
        raise ValueError("density must be non-negative")
    mix = np.asarray(type_mix if type_mix is not None else DEFAULT_TYPE_MIX, dtype=float)
    if mix.shape != (len(LANDMARK_TYPES),) or np.any(mix < 0) or mix.sum() <= 0:
        raise ValueError(f"type_mix must be {len(LANDMARK_TYPES)} non-negative weights")
    mix = mix / mix.sum()

    rng = np.random.default_rng(seed)
    dlat = segment_len_m / METERS_PER_DEG_LAT
    dlon = segment_len_m / (METERS_PER_DEG_LAT * math.cos(math.radians(origin.lat)))

    def node(r: int, c: int) -> GeoPoint:
        return GeoPoint(origin.lat + r * dlat, origin.lon + c * dlon)

    segments = []
    for r in range(rows):
        for c in range(cols):
            if c + 1 < cols:
                segments.append((f"h{r:03d}_{c:03d}", node(r, c), node(r, c + 1)))
            if r + 1 < rows:
                segments.append((f"v{r:03d}_{c:03d}", node(r, c), node(r + 1, c)))

    built = []
    for sid, a, b in segments:
        bare = RoadSegment(sid, [a, b])
        n_landmarks = int(rng.poisson(density_per_km * bare.length_m / 1000.0))
        landmarks = []
        if n_landmarks > 0 and bare.length_m > 2.0:
            offsets = np.sort(rng.uniform(1.0, bare.length_m - 1.0, size=n_landmarks))
            types = rng.choice(len(LANDMARK_TYPES), size=n_landmarks, p=mix)
            for off, ti in zip(offsets, types):
                landmarks.append(
                    SemanticLandmark(LANDMARK_TYPES[int(ti)], bare.point_at(float(off)), float(off))
                )
        built.append(RoadSegment(sid, [a, b], landmarks=landmarks))
    return RoadNetwork(built)


def sample_route(
    network: RoadNetwork,
    length_km: float,
    seed: int = 0,
    speed_mps: float = 15.0,
    speed_jitter: float = 0.2,
) -> RouteTruth:
    """Random walk over whole segments without immediate backtracking.

    Nominal speed is jittered per segment; truth fixes are emitted at 1 Hz.
    If a dead end forces a stop before the requested length, the shorter
    route is returned with ``truncated`` set.
    """
    if length_km <= 0.0:
        raise ValueError("length_km must be positive")
    rng = np.random.default_rng(seed)
    sids = sorted(network.segments)
    start_sid = sids[int(rng.integers(len(sids)))]
    na, nb = network.segment_endpoints(start_sid)
    node = na if rng.integers(2) == 0 else nb

    traversals: list[Traversal] = []
    total_m = 0.0
    t = 0.0
    prev_sid: Optional[str] = None
    truncated = False
    while total_m < length_km * 1000.0:
        options = [
            (other, sid, length)
            for other, sid, length in network.edges_at(node)
            if sid != prev_sid
        ]
        if not options:
            truncated = prev_sid is not None
            break
        other, sid, length = options[int(rng.integers(len(options)))]
        seg = network.segments[sid]
        ascending = node == network.segment_endpoints(sid)[0]
        speed = speed_mps * (1.0 + rng.uniform(-speed_jitter, speed_jitter))
        t_exit = t + seg.length_m / speed
        traversals.append(Traversal(sid, ascending, speed, t, t_exit, seg.length_m))
        total_m += seg.length_m
        t = t_exit
        node = other
        prev_sid = sid

    if not traversals:
        raise ValueError("route sampling produced no traversals")

    fixes = []
    for tick in range(int(math.floor(t)) + 1):
        fixes.append(_truth_at(network, traversals, float(tick)))
    path = SegmentPath((tv.segment_id, tv.length_m) for tv in traversals)
    return RouteTruth(
        path=path,
        traversals=tuple(traversals),
        fixes=tuple(fixes),
        total_time_s=t,
        truncated=truncated,
    )


def _truth_at(network: RoadNetwork, traversals: Sequence[Traversal], t: float) -> TruthFix:
    """Ground-truth position/heading at time t along a traversal schedule."""
    tv = traversals[-1]
    for cand in traversals:
        if cand.t_enter <= t < cand.t_exit:
            tv = cand
            break
    seg = network.segments[tv.segment_id]
    dist = min(max((t - tv.t_enter) * tv.speed_mps, 0.0), tv.length_m)
    offset = dist if tv.ascending else tv.length_m - dist
    heading = seg.bearing_at(offset)
    if not tv.ascending:
        heading = norm_deg(heading + 180.0)
    return TruthFix(t=t, loc=seg.point_at(offset), heading_deg=heading, speed_mps=tv.speed_mps)


def emit_semantic_events(
    route: RouteTruth,
    network: RoadNetwork,
    confusion: ConfusionMatrix,
    noise: Optional[NoiseModel] = None,
    seed: int = 0,
    clean_err_m: float = 1.0,
) -> tuple[list[SemanticEvent], list[EventAudit]]:
    """Draw detections for every landmark the route passes.

    The detected type is sampled from the landmark's confusion row; a
    NO_CLASS draw drops the event (it still appears in the audit).  Event
    locations are the truth passage points corrupted by ``noise``; event
    time and heading come from the truth schedule.
    """
    rng = np.random.default_rng(seed)
    sigma = 0.0 if noise is None else noise.err_mean_m / RAYLEIGH_MEAN_FACTOR
    err_m = clean_err_m if noise is None or noise.err_mean_m <= 0.0 else noise.err_mean_m
    events: list[SemanticEvent] = []
    audit: list[EventAudit] = []
    for tv in route.traversals:
        seg = network.segments[tv.segment_id]
        landmarks = seg.landmarks if tv.ascending else seg.landmarks[::-1]
        for lm in landmarks:
            dist = lm.offset_m if tv.ascending else tv.length_m - lm.offset_m
            t_pass = tv.t_enter + dist / tv.speed_mps
            heading = seg.bearing_at(lm.offset_m)
            if not tv.ascending:
                heading = norm_deg(heading + 180.0)
            drawn = DETECTED_TYPES[int(rng.choice(len(DETECTED_TYPES), p=confusion.row(lm.type)))]
            audit.append(EventAudit(t_pass, tv.segment_id, lm.offset_m, lm.type, drawn))
            if drawn is SemanticType.NO_CLASS:
                continue
            loc = lm.loc
            if sigma > 0.0:
                east, north = rng.normal(0.0, sigma, size=2)
                loc = _offset_point(loc, float(east), float(north))
            events.append(
                SemanticEvent(t=t_pass, loc=loc, err_m=err_m, heading_deg=heading, type=drawn)
            )
    return events, audit


def corrupt_positions(
    truth_fixes: Sequence[TruthFix], model: NoiseModel, seed: int = 0
) -> tuple[list[RawFix], list[int]]:
    """Subsample truth to the regime's update density and add noise.

    Noise is isotropic Gaussian with per-axis sigma = err_mean / sqrt(pi/2),
    so the mean radial error equals ``err_mean_m``.  With probability
    ``pingpong_prob`` an emitted fix instead repeats one of the previous
    ``pingpong_depth`` emitted locations (cell handover bouncing).  Returns
    the fixes and the indices of ping-pong replacements.
    """
    if not truth_fixes:
        return [], []
    rng = np.random.default_rng(seed)
    sigma = model.err_mean_m / RAYLEIGH_MEAN_FACTOR
    err_m = model.err_mean_m if model.err_mean_m > 0.0 else 1.0
    interval_m = 1000.0 / model.updates_per_km

    out: list[RawFix] = []
    injected: list[int] = []
    cumdist = 0.0
    next_emit = 0.0
    prev_loc = truth_fixes[0].loc
    for fix in truth_fixes:
        cumdist += geodesic_distance(prev_loc, fix.loc)
        prev_loc = fix.loc
        if cumdist < next_emit:
            continue
        next_emit += interval_m
        if out and model.pingpong_prob > 0.0 and rng.random() < model.pingpong_prob:
            depth = min(model.pingpong_depth, len(out))
            repeat = out[len(out) - 1 - int(rng.integers(depth))]
            injected.append(len(out))
            out.append(RawFix(t=fix.t, loc=repeat.loc, err_m=err_m))
            continue
        loc = fix.loc
        if sigma > 0.0:
            east, north = rng.normal(0.0, sigma, size=2)
            loc = _offset_point(loc, float(east), float(north))
        out.append(RawFix(t=fix.t, loc=loc, err_m=err_m))
    return out, injected


def simulate_trace(
    network: RoadNetwork,
    noise: NoiseModel,
    length_km: float,
    seed: int,
    confusion: Optional[ConfusionMatrix] = None,
    speed_mps: float = 15.0,
) -> tuple[SimTrace, RouteTruth]:
    """Full simulation: route, detections, and corrupted position stream.

    The detection draw defaults to the unsmoothed calibration confusion
    matrix (real misses, hard zeros), independent of whatever smoothing the
    matcher uses.
    """
    if confusion is None:
        confusion = build_confusion(epsilon=0.0)
    ss = np.random.SeedSequence(seed)
    route_seed, event_seed, noise_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(3))
    route = sample_route(network, length_km, seed=route_seed, speed_mps=speed_mps)
    events, audit = emit_semantic_events(route, network, confusion, noise, seed=event_seed)
    fixes, injected = corrupt_positions(route.fixes, noise, seed=noise_seed)
    trace = SimTrace(
        truth_path=route.path,
        truth_fixes=route.fixes,
        observations=tuple(events),
        raw_fixes=tuple(fixes),
        injected_outlier_indices=tuple(injected),
        event_audit=tuple(audit),
    )
    return trace, route


def sensor_stream(route: RouteTruth) -> list[SensorSample]:
    """1 Hz inertial heading stream derived from the truth schedule."""
    return [
        SensorSample(t=f.t, gravity_accel=0.0, heading_deg=f.heading_deg) for f in route.fixes
    ]


def write_truth(path: str, truth_path: SegmentPath, trace_id: str) -> None:
    """Write the ground-truth segment path sidecar as JSON."""
    doc = {
        "trace_id": trace_id,
        "total_length_m": truth_path.total_length_m,
        "path": [{"segment_id": sid, "length_m": length} for sid, length in truth_path.entries],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_truth(source: Union[str, "object"]) -> tuple[Optional[str], SegmentPath]:
    """Read a segment-path sidecar; returns (trace id, path)."""
    if isinstance(source, str):
        with open(source) as fh:
            doc = json.load(fh)
    else:
        doc = json.load(source)
    entries = [(e["segment_id"], float(e["length_m"])) for e in doc["path"]]
    return doc.get("trace_id"), SegmentPath(entries)
