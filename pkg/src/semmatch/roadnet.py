"""Semantically-enriched road network: geodesy, state space, spatial queries.

The network is a graph of road segments whose endpoints are shared nodes.
Every landmark tagged on a segment (bump, tunnel, turn, ...) becomes one
hidden state, so a physical segment is split into as many states as it has
landmarks.  The network is immutable after construction and safe to share
across workers.
"""

from __future__ import annotations

import heapq
import json
import math
from bisect import bisect_right
from dataclasses import dataclass
from enum import Enum
from typing import BinaryIO, Iterable, Optional, Sequence, Union

EARTH_RADIUS_M = 6_371_000.0
METERS_PER_DEG_LAT = EARTH_RADIUS_M * math.pi / 180.0

# Landmarks farther than this from their segment polyline are rejected at
# load time so arc-length offsets stay meaningful.
LANDMARK_SNAP_TOLERANCE_M = 1.0

_MISSING = object()


class NetworkError(Exception):
    """Base class for road network failures."""


class NetworkParseError(NetworkError):
    """The network file could not be parsed."""


class NetworkValidationError(NetworkError):
    """The network violates a structural invariant."""


class UnknownStateError(NetworkError):
    """A hidden state does not belong to this network."""


class UnreachableStatesError(NetworkError):
    """No path exists between the two states."""


def wrap_deg(angle: float) -> float:
    """Wrap an angle difference into (-180, 180] degrees."""
    a = math.fmod(angle, 360.0)
    if a > 180.0:
        a -= 360.0
    elif a <= -180.0:
        a += 360.0
    return a


def norm_deg(angle: float) -> float:
    """Normalize a heading into [0, 360) degrees."""
    a = math.fmod(angle, 360.0)
    return a + 360.0 if a < 0.0 else a


class SemanticType(Enum):
    """Road semantic classes; NO_CLASS is a detector outcome, never a map tag."""

    CATS_EYE = "cats_eye"
    BUMP = "bump"
    CURVE = "curve"
    BRIDGE = "bridge"
    TUNNEL = "tunnel"
    TURN = "turn"
    U_TURN = "u_turn"
    NO_CLASS = "no_class"

    @classmethod
    def from_tag(cls, tag: str) -> "SemanticType":
        try:
            return cls(tag)
        except ValueError:
            raise ValueError(f"unknown semantic type tag {tag!r}") from None

    @property
    def tag(self) -> str:
        return self.value


# True landmark classes, in the canonical row/column order of the detector
# confusion matrix.
LANDMARK_TYPES: tuple[SemanticType, ...] = (
    SemanticType.CATS_EYE,
    SemanticType.BUMP,
    SemanticType.CURVE,
    SemanticType.BRIDGE,
    SemanticType.TUNNEL,
    SemanticType.TURN,
    SemanticType.U_TURN,
)


@dataclass(frozen=True)
class GeoPoint:
    """A WGS84 coordinate pair in degrees."""

    lat: float
    lon: float

    def __post_init__(self):
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise ValueError("coordinates must be finite")
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude {self.lat} out of range [-90, 90]")
        if not -180.0 <= self.lon < 180.0:
            raise ValueError(f"longitude {self.lon} out of range [-180, 180)")


def geodesic_distance(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance between two points, in meters.

    Haversine on a sphere of radius 6371 km; symmetric and non-negative,
    zero only for identical coordinates.
    """
    lat1 = math.radians(a.lat)
    lat2 = math.radians(b.lat)
    dlat = lat2 - lat1
    dlon = math.radians(b.lon - a.lon)
    h = math.sin(dlat / 2.0) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def bearing(a: GeoPoint, b: GeoPoint) -> float:
    """Initial great-circle bearing from a to b, degrees in [0, 360).

    North is 0, east is 90.  Raises ValueError for coincident points, where
    the bearing is undefined.
    """
    if a.lat == b.lat and a.lon == b.lon:
        raise ValueError("bearing undefined for coincident points")
    lat1 = math.radians(a.lat)
    lat2 = math.radians(b.lat)
    dlon = math.radians(b.lon - a.lon)
    y = math.sin(dlon) * math.cos(lat2)
    x = math.cos(lat1) * math.sin(lat2) - math.sin(lat1) * math.cos(lat2) * math.cos(dlon)
    return norm_deg(math.degrees(math.atan2(y, x)))


@dataclass(frozen=True)
class SemanticLandmark:
    """A typed landmark positioned along a parent segment's polyline."""

    type: SemanticType
    loc: GeoPoint
    offset_m: float

    def __post_init__(self):
        if self.type is SemanticType.NO_CLASS:
            raise ValueError("NO_CLASS is not a valid map landmark type")
        if self.offset_m < 0.0:
            raise ValueError("landmark offset must be non-negative")


class RoadSegment:
    """A road segment: a polyline with optional speed limit and landmarks."""

    def __init__(
        self,
        segment_id: str,
        polyline: Sequence[GeoPoint],
        speed_limit_mps: Optional[float] = None,
        landmarks: Sequence[SemanticLandmark] = (),
    ):
        if len(polyline) < 2:
            raise NetworkValidationError(f"segment {segment_id}: polyline needs >= 2 points")
        self.id = segment_id
        self.polyline = tuple(polyline)
        self.speed_limit_mps = speed_limit_mps
        # Cumulative arc length at each vertex.
        cum = [0.0]
        for p, q in zip(self.polyline, self.polyline[1:]):
            cum.append(cum[-1] + geodesic_distance(p, q))
        self._cum = cum
        if cum[-1] <= 0.0:
            raise NetworkValidationError(f"segment {segment_id}: zero arc length")
        lms = sorted(landmarks, key=lambda lm: lm.offset_m)
        for lm in lms:
            if lm.offset_m > cum[-1] + 1e-6:
                raise NetworkValidationError(
                    f"segment {segment_id}: landmark offset {lm.offset_m:.1f} m "
                    f"beyond segment length {cum[-1]:.1f} m"
                )
        self.landmarks = tuple(lms)

    @property
    def length_m(self) -> float:
        return self._cum[-1]

    def point_at(self, offset_m: float) -> GeoPoint:
        """Interpolated point at an arc-length offset along the polyline."""
        off = min(max(offset_m, 0.0), self.length_m)
        i = min(bisect_right(self._cum, off), len(self._cum) - 1) - 1
        span = self._cum[i + 1] - self._cum[i]
        f = 0.0 if span <= 0.0 else (off - self._cum[i]) / span
        p, q = self.polyline[i], self.polyline[i + 1]
        return GeoPoint(p.lat + f * (q.lat - p.lat), p.lon + f * (q.lon - p.lon))

    def bearing_at(self, offset_m: float) -> float:
        """Polyline heading (direction of increasing offset) at an offset."""
        off = min(max(offset_m, 0.0), self.length_m)
        i = min(bisect_right(self._cum, off), len(self._cum) - 1) - 1
        return bearing(self.polyline[i], self.polyline[i + 1])

    def project(self, point: GeoPoint) -> tuple[float, float]:
        """Project a point onto the polyline.

        Returns (offset_m, distance_m) of the closest polyline point.  Uses a
        local equirectangular frame per edge, which is accurate at the meter
        scale this is used for.
        """
        best_off, best_dist = 0.0, float("inf")
        for i in range(len(self.polyline) - 1):
            p, q = self.polyline[i], self.polyline[i + 1]
            coslat = math.cos(math.radians((p.lat + q.lat) / 2.0))
            px = (q.lon - p.lon) * coslat * METERS_PER_DEG_LAT
            py = (q.lat - p.lat) * METERS_PER_DEG_LAT
            wx = (point.lon - p.lon) * coslat * METERS_PER_DEG_LAT
            wy = (point.lat - p.lat) * METERS_PER_DEG_LAT
            seg_len2 = px * px + py * py
            t = 0.0 if seg_len2 <= 0.0 else max(0.0, min(1.0, (wx * px + wy * py) / seg_len2))
            proj = GeoPoint(p.lat + t * (q.lat - p.lat), p.lon + t * (q.lon - p.lon))
            d = geodesic_distance(point, proj)
            if d < best_dist:
                best_dist = d
                edge_len = self._cum[i + 1] - self._cum[i]
                best_off = self._cum[i] + t * edge_len
        return best_off, best_dist


@dataclass(frozen=True)
class HiddenState:
    """One (segment, landmark) pair; the unit of map-matching inference.

    ``index`` is the state's position in the network state space and is the
    deterministic tie-break key used throughout decoding.
    """

    index: int
    segment_id: str
    type: SemanticType
    loc: GeoPoint
    offset_m: float
    bearing_deg: float


class _StrTree:
    """Static STR-packed R-tree over points, built once at network load.

    Leaves hold point indices; inner nodes hold child bounding boxes.  Only
    box queries are supported; callers refine with geodesic checks.
    """

    _LEAF_SIZE = 16
    _FANOUT = 8

    def __init__(self, points: Sequence[tuple[float, float]]):
        # Each node: (minx, miny, maxx, maxy, children, point_indices)
        self._points = list(points)
        if not points:
            self._root = None
            return
        order = sorted(range(len(points)), key=lambda i: points[i])
        leaves = []
        n_slices = max(1, math.isqrt(math.ceil(len(order) / self._LEAF_SIZE)))
        slice_size = math.ceil(len(order) / n_slices)
        for s in range(0, len(order), slice_size):
            col = sorted(order[s : s + slice_size], key=lambda i: (points[i][1], points[i][0]))
            for k in range(0, len(col), self._LEAF_SIZE):
                idxs = col[k : k + self._LEAF_SIZE]
                xs = [points[i][0] for i in idxs]
                ys = [points[i][1] for i in idxs]
                leaves.append((min(xs), min(ys), max(xs), max(ys), None, idxs))
        level = leaves
        while len(level) > 1:
            nxt = []
            level.sort(key=lambda nd: (nd[0], nd[1]))
            for k in range(0, len(level), self._FANOUT):
                children = level[k : k + self._FANOUT]
                nxt.append(
                    (
                        min(c[0] for c in children),
                        min(c[1] for c in children),
                        max(c[2] for c in children),
                        max(c[3] for c in children),
                        children,
                        None,
                    )
                )
            level = nxt
        self._root = level[0]

    def query_box(self, minx: float, miny: float, maxx: float, maxy: float) -> list[int]:
        """Indices of points inside the closed box [minx, maxx] x [miny, maxy]."""
        if self._root is None:
            return []
        out: list[int] = []
        stack = [self._root]
        while stack:
            nminx, nminy, nmaxx, nmaxy, children, idxs = stack.pop()
            if nminx > maxx or nmaxx < minx or nminy > maxy or nmaxy < miny:
                continue
            if children is not None:
                stack.extend(children)
            else:
                for i in idxs:
                    x, y = self._points[i]
                    if minx <= x <= maxx and miny <= y <= maxy:
                        out.append(i)
        return out


class RoadNetwork:
    """Immutable road network with landmark state space and spatial index."""

    def __init__(self, segments: Iterable[RoadSegment]):
        self.segments: dict[str, RoadSegment] = {}
        for seg in segments:
            if seg.id in self.segments:
                raise NetworkValidationError(f"duplicate segment id {seg.id!r}")
            self.segments[seg.id] = seg
        if not self.segments:
            raise NetworkValidationError("empty network: no segments")

        # Endpoint graph: shared coordinates (to ~1 cm) become one node.
        self._node_ids: dict[tuple[float, float], int] = {}
        self._seg_nodes: dict[str, tuple[int, int]] = {}
        self._adj: dict[int, list[tuple[int, str, float]]] = {}
        for sid in sorted(self.segments):
            seg = self.segments[sid]
            a = self._node_for(seg.polyline[0])
            b = self._node_for(seg.polyline[-1])
            self._seg_nodes[sid] = (a, b)
            self._adj.setdefault(a, []).append((b, sid, seg.length_m))
            self._adj.setdefault(b, []).append((a, sid, seg.length_m))

        # One hidden state per landmark, indexed in (segment id, offset) order.
        states: list[HiddenState] = []
        seen_keys: set[tuple[str, float]] = set()
        for sid in sorted(self.segments):
            seg = self.segments[sid]
            for lm in seg.landmarks:
                key = (sid, round(lm.offset_m, 3))
                if key in seen_keys:
                    raise NetworkValidationError(
                        f"segment {sid}: duplicate landmark at offset {lm.offset_m:.1f} m"
                    )
                seen_keys.add(key)
                states.append(
                    HiddenState(
                        index=len(states),
                        segment_id=sid,
                        type=lm.type,
                        loc=lm.loc,
                        offset_m=lm.offset_m,
                        bearing_deg=seg.bearing_at(lm.offset_m),
                    )
                )
        self.state_space: tuple[HiddenState, ...] = tuple(states)
        self._index = _StrTree([(s.loc.lon, s.loc.lat) for s in states])
        # Caches keyed by state index; cheap to rebuild, never invalidated
        # because the network is immutable.
        self._dijkstra_cache: dict[int, tuple[dict[int, float], dict[int, tuple]]] = {}
        self._geometry_cache: dict[tuple[int, int], Optional[tuple[float, tuple]]] = {}

    def _node_for(self, p: GeoPoint) -> int:
        key = (round(p.lat, 7), round(p.lon, 7))
        if key not in self._node_ids:
            self._node_ids[key] = len(self._node_ids)
        return self._node_ids[key]

    @property
    def state_count(self) -> int:
        return len(self.state_space)

    def segment_endpoints(self, segment_id: str) -> tuple[int, int]:
        """Endpoint node ids of a segment, in polyline order."""
        return self._seg_nodes[segment_id]

    def edges_at(self, node: int) -> list[tuple[int, str, float]]:
        """Incident edges of a node as (other node, segment id, length) tuples."""
        return list(self._adj.get(node, ()))

    def _check_state(self, s: HiddenState) -> None:
        if not 0 <= s.index < len(self.state_space) or self.state_space[s.index] != s:
            raise UnknownStateError(f"state {s.segment_id}@{s.offset_m:.1f} not in this network")

    # ------------------------------------------------------------------
    # Spatial queries
    # ------------------------------------------------------------------

    def query_radius(self, center: GeoPoint, radius_m: float) -> list[HiddenState]:
        """All hidden states within a geodesic radius of a center point.

        Filter-and-refine: a degree bounding box feeds the R-tree, then every
        candidate is verified with the exact geodesic distance.
        """
        if radius_m <= 0.0:
            raise ValueError("radius must be positive")
        dlat = radius_m / METERS_PER_DEG_LAT
        # Longitude degrees shrink with latitude; size the box for the
        # widest point of the search circle and pad slightly.
        max_abs_lat = min(89.9, abs(center.lat) + dlat)
        dlon = radius_m / (METERS_PER_DEG_LAT * math.cos(math.radians(max_abs_lat))) * 1.001
        dlat *= 1.001
        hits = self._index.query_box(
            center.lon - dlon, center.lat - dlat, center.lon + dlon, center.lat + dlat
        )
        return [
            self.state_space[i]
            for i in sorted(hits)
            if geodesic_distance(self.state_space[i].loc, center) <= radius_m
        ]

    # ------------------------------------------------------------------
    # Topology
    # ------------------------------------------------------------------

    def _dijkstra_from(self, state: HiddenState) -> tuple[dict[int, float], dict[int, tuple]]:
        """Shortest travel distance from a state to every endpoint node.

        Returns (dist, pred) where pred maps node -> (previous node,
        segment id) and source nodes map to (None, None).  Cached per state;
        the graph never changes.
        """
        cached = self._dijkstra_cache.get(state.index)
        if cached is not None:
            return cached
        seg = self.segments[state.segment_id]
        na, nb = self._seg_nodes[state.segment_id]
        dist: dict[int, float] = {}
        pred: dict[int, tuple] = {}
        # Third tuple slot is a tie counter so the heap never compares the
        # (possibly None) predecessor payloads.
        tiebreak = 0
        heap: list[tuple[float, int, int, Optional[int], Optional[str]]] = [
            (state.offset_m, na, 0, None, None),
            (seg.length_m - state.offset_m, nb, 1, None, None),
        ]
        heapq.heapify(heap)
        while heap:
            d, node, _, prev, via = heapq.heappop(heap)
            if node in dist:
                continue
            dist[node] = d
            pred[node] = (prev, via)
            for other, sid, length in self._adj.get(node, ()):
                if other not in dist:
                    tiebreak += 1
                    heapq.heappush(heap, (d + length, other, tiebreak, node, sid))
        self._dijkstra_cache[state.index] = (dist, pred)
        return dist, pred

    def travel_distance(self, a: HiddenState, b: HiddenState) -> float:
        """Shortest along-road distance between two states, meters (inf if none)."""
        self._check_state(a)
        self._check_state(b)
        if a.segment_id == b.segment_id:
            return abs(a.offset_m - b.offset_m)
        dist, _ = self._dijkstra_from(a)
        na, nb = self._seg_nodes[b.segment_id]
        seg_b = self.segments[b.segment_id]
        best = float("inf")
        if na in dist:
            best = dist[na] + b.offset_m
        if nb in dist:
            best = min(best, dist[nb] + seg_b.length_m - b.offset_m)
        return best

    def connected(self, a: HiddenState, b: HiddenState, max_travel_m: float) -> bool:
        """Whether b is reachable from a within a travel-distance budget.

        States on the same segment are always connected.
        """
        self._check_state(a)
        self._check_state(b)
        if a.segment_id == b.segment_id:
            return True
        return self.travel_distance(a, b) <= max_travel_m

    def _landmarks_within(
        self, sid: str, lo: float, hi: float, ascending: bool
    ) -> list[SemanticLandmark]:
        """Landmarks on a segment with lo < offset < hi, in traversal order."""
        seg = self.segments[sid]
        lms = [lm for lm in seg.landmarks if lo < lm.offset_m < hi]
        return lms if ascending else lms[::-1]

    def semantics_between(self, a: HiddenState, b: HiddenState) -> list[SemanticLandmark]:
        """Landmarks strictly between two states along the minimal-length path.

        The endpoint states themselves are excluded; adjacent landmarks yield
        an empty list.  Raises UnreachableStatesError when no path exists.
        """
        self._check_state(a)
        self._check_state(b)
        if a.segment_id == b.segment_id:
            lo, hi = sorted((a.offset_m, b.offset_m))
            return self._landmarks_within(a.segment_id, lo, hi, a.offset_m <= b.offset_m)

        dist, pred = self._dijkstra_from(a)
        seg_b = self.segments[b.segment_id]
        na, nb = self._seg_nodes[b.segment_id]
        entries = []
        if na in dist:
            entries.append((dist[na] + b.offset_m, na))
        if nb in dist:
            entries.append((dist[nb] + seg_b.length_m - b.offset_m, nb))
        if not entries:
            raise UnreachableStatesError(
                f"no path between segments {a.segment_id!r} and {b.segment_id!r}"
            )
        entry_node = min(entries)[1]

        # Reconstruct the node-to-node hops back to one of a's endpoints.
        hops = []
        node = entry_node
        while True:
            prev, via = pred[node]
            if prev is None:
                break
            hops.append((via, prev, node))
            node = prev
        hops.reverse()
        exit_node = hops[0][1] if hops else entry_node

        out: list[SemanticLandmark] = []
        # Partial walk on a's own segment, from the state to its exit endpoint.
        seg_a = self.segments[a.segment_id]
        a_na, _ = self._seg_nodes[a.segment_id]
        if exit_node == a_na:
            out.extend(self._landmarks_within(a.segment_id, -1.0, a.offset_m, ascending=False))
        else:
            out.extend(
                self._landmarks_within(a.segment_id, a.offset_m, seg_a.length_m + 1.0, True)
            )
        # Full traversals of intermediate segments.
        for sid, u, _v in hops:
            seg = self.segments[sid]
            s_na, _ = self._seg_nodes[sid]
            ascending = u == s_na
            lo, hi = -1.0, seg.length_m + 1.0
            out.extend(self._landmarks_within(sid, lo, hi, ascending))
        # Partial walk on b's segment, from the entry endpoint to the state.
        if entry_node == na:
            out.extend(self._landmarks_within(b.segment_id, -1.0, b.offset_m, ascending=True))
        else:
            out.extend(
                self._landmarks_within(b.segment_id, b.offset_m, seg_b.length_m + 1.0, False)
            )
        return out

    def transition_geometry(
        self, a: HiddenState, b: HiddenState
    ) -> Optional[tuple[float, tuple[SemanticType, ...]]]:
        """(map heading change, skipped landmark types) for a state pair.

        Heading change is wrap(b.bearing - a.bearing).  Returns None when the
        states are mutually unreachable.  Cached symmetrically.
        """
        if a.index == b.index:
            return 0.0, ()
        key = (min(a.index, b.index), max(a.index, b.index))
        cached = self._geometry_cache.get(key, _MISSING)
        if cached is _MISSING:
            lo = self.state_space[key[0]]
            hi = self.state_space[key[1]]
            try:
                skipped = tuple(lm.type for lm in self.semantics_between(lo, hi))
                cached = (wrap_deg(hi.bearing_deg - lo.bearing_deg), skipped)
            except UnreachableStatesError:
                cached = None
            self._geometry_cache[key] = cached
        if cached is None:
            return None
        dtheta, skipped = cached
        if a.index > b.index:
            return wrap_deg(-dtheta), skipped[::-1]
        return dtheta, skipped


# ----------------------------------------------------------------------
# GeoJSON loading / serialization
# ----------------------------------------------------------------------


def _segment_from_feature(feature: dict) -> RoadSegment:
    geom = feature.get("geometry") or {}
    if geom.get("type") != "LineString":
        raise NetworkParseError(f"unsupported geometry type {geom.get('type')!r}")
    props = feature.get("properties") or {}
    if "id" not in props:
        raise NetworkParseError("segment feature is missing an 'id' property")
    sid = str(props["id"])
    try:
        polyline = [GeoPoint(lat, lon) for lon, lat in geom.get("coordinates", [])]
    except (TypeError, ValueError) as exc:
        raise NetworkParseError(f"segment {sid}: bad coordinates ({exc})") from exc
    if len(polyline) < 2:
        raise NetworkValidationError(f"segment {sid}: polyline needs >= 2 points")
    maxspeed = props.get("maxspeed")
    speed_limit = None if maxspeed is None else float(maxspeed) / 3.6

    probe = RoadSegment(sid, polyline)
    landmarks = []
    for entry in props.get("semantics", []):
        try:
            sem_type = SemanticType.from_tag(entry["type"])
            loc = GeoPoint(entry["lat"], entry["lon"])
        except (KeyError, TypeError, ValueError) as exc:
            raise NetworkParseError(f"segment {sid}: bad semantics entry ({exc})") from exc
        if sem_type is SemanticType.NO_CLASS:
            raise NetworkValidationError(f"segment {sid}: NO_CLASS cannot be a map landmark")
        offset, gap = probe.project(loc)
        if gap > LANDMARK_SNAP_TOLERANCE_M:
            raise NetworkValidationError(
                f"segment {sid}: landmark {sem_type.tag} is {gap:.1f} m off the polyline"
            )
        landmarks.append(SemanticLandmark(sem_type, loc, offset))
    return RoadSegment(sid, polyline, speed_limit, landmarks)


def load_network(source: Union[str, BinaryIO], fmt: str = "geojson") -> RoadNetwork:
    """Load a road network from a GeoJSON FeatureCollection.

    ``source`` is a path or a readable (byte) stream.  Each LineString
    feature is one segment; its ``semantics`` property lists the landmarks
    as {type, lon, lat} entries.
    """
    if fmt != "geojson":
        raise NetworkParseError(f"unsupported network format {fmt!r}")
    try:
        if isinstance(source, str):
            with open(source, "rb") as fh:
                doc = json.load(fh)
        else:
            doc = json.load(source)
    except json.JSONDecodeError as exc:
        raise NetworkParseError(f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise NetworkParseError("expected a GeoJSON FeatureCollection")
    segments = [_segment_from_feature(f) for f in doc.get("features", [])]
    return RoadNetwork(segments)


def network_to_geojson(network: RoadNetwork) -> dict:
    """Serialize a network back to the GeoJSON FeatureCollection format."""
    features = []
    for sid in sorted(network.segments):
        seg = network.segments[sid]
        props: dict = {
            "id": seg.id,
            "semantics": [
                {"type": lm.type.tag, "lon": lm.loc.lon, "lat": lm.loc.lat}
                for lm in seg.landmarks
            ],
        }
        if seg.speed_limit_mps is not None:
            props["maxspeed"] = seg.speed_limit_mps * 3.6
        features.append(
            {
                "type": "Feature",
                "geometry": {
                    "type": "LineString",
                    "coordinates": [[p.lon, p.lat] for p in seg.polyline],
                },
                "properties": props,
            }
        )
    return {"type": "FeatureCollection", "features": features}
