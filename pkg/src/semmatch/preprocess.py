"""Noise reduction for inertial and location streams.

Three location filters run in succession: a windowed speed plausibility
check, an alpha-trimmed mean over spatially ordered neighbors (against
ping-pong bouncing), and a sensor-confirmed direction filter.  Rejected
fixes keep the previous accepted location, so stream length is preserved.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence, TextIO, Union

import numpy as np

from semmatch.roadnet import GeoPoint, bearing, geodesic_distance, norm_deg, wrap_deg
from semmatch.semantics import SemanticEvent, SemanticType

SPACE_FILLING_GRID = 64  # cells per axis of the neighbor-ordering grid


@dataclass(frozen=True)
class SensorSample:
    """One smoothed world-frame inertial reading."""

    t: float
    gravity_accel: float
    heading_deg: float

    def __post_init__(self):
        if not 0.0 <= self.heading_deg < 360.0:
            raise ValueError(f"heading {self.heading_deg} not in [0, 360)")


@dataclass(frozen=True)
class RawFix:
    """A raw position estimate with its 1-sigma error, meters."""

    t: float
    loc: GeoPoint
    err_m: float

    def __post_init__(self):
        if self.err_m <= 0.0:
            raise ValueError("fix error estimate must be positive")


@dataclass(frozen=True)
class CleanFix:
    """A preprocessed fix; rejected fixes carry the prior location."""

    t: float
    loc: GeoPoint
    err_m: float
    speed_rejected: bool = False
    bounce_smoothed: bool = False
    direction_rejected: bool = False
    sensor_gap: bool = False


@dataclass(frozen=True)
class FilterConfig:
    """Tunables for the location preprocessing pipeline."""

    w_s: int = 3                        # speed-estimate history window, fixes
    v_max_mps: float = 50.0             # physical speed cap when the map has none
    speed_margin: float = 0.2           # tolerance above the speed threshold
    alpha: float = 0.2                  # trim fraction per side of the bounce window
    w_b: int = 5                        # bounce filter window, fixes (odd)
    turn_threshold_deg: float = 30.0    # fix bearing change that suggests a turn
    confirm_threshold_deg: float = 10.0 # sensor change needed to confirm a turn
    sensor_bandwidth: int = 5           # local-regression window for sensor smoothing

    def __post_init__(self):
        if self.w_s < 1:
            raise ValueError("w_s must be >= 1")
        if not 0.0 <= self.alpha <= 0.5:
            raise ValueError("alpha must be in [0, 0.5]")
        if self.w_b < 3 or self.w_b % 2 == 0:
            raise ValueError("w_b must be odd and >= 3")
        if self.v_max_mps <= 0 or self.turn_threshold_deg <= 0 or self.confirm_threshold_deg <= 0:
            raise ValueError("speed and angle thresholds must be positive")
        if self.speed_margin < 0:
            raise ValueError("speed_margin must be non-negative")
        if self.sensor_bandwidth < 3 or self.sensor_bandwidth % 2 == 0:
            raise ValueError("sensor_bandwidth must be odd and >= 3")


# ----------------------------------------------------------------------
# Inertial sensor smoothing
# ----------------------------------------------------------------------


def _loess_fit(ts: np.ndarray, ys: np.ndarray, bandwidth: int) -> np.ndarray:
    """Locally weighted linear regression with tricube weights."""
    n = len(ts)
    out = np.empty(n)
    half = bandwidth // 2
    for i in range(n):
        lo = max(0, min(i - half, n - bandwidth))
        t_win = ts[lo : lo + bandwidth]
        y_win = ys[lo : lo + bandwidth]
        d = np.abs(t_win - ts[i])
        dmax = d.max()
        if dmax <= 0.0:
            out[i] = ys[i]
            continue
        w = (1.0 - (d / dmax) ** 3) ** 3
        x = t_win - ts[i]
        sw = w.sum()
        sx = (w * x).sum()
        sxx = (w * x * x).sum()
        sy = (w * y_win).sum()
        sxy = (w * x * y_win).sum()
        denom = sw * sxx - sx * sx
        if abs(denom) < 1e-12 * max(sxx, 1.0):
            out[i] = sy / sw
        else:
            # Intercept of the weighted fit, i.e. the value at x = 0.
            out[i] = (sxx * sy - sx * sxy) / denom
    return out


def smooth_sensors(stream: Sequence[SensorSample], bandwidth: int) -> list[SensorSample]:
    """Smooth a sensor stream with a weighted local regression filter.

    Headings are smoothed in unwrapped angle space and re-wrapped, so a
    stream crossing north does not tear.  Streams shorter than the bandwidth
    are returned unchanged.
    """
    if bandwidth < 3 or bandwidth % 2 == 0:
        raise ValueError("bandwidth must be odd and >= 3")
    if len(stream) < bandwidth:
        return list(stream)
    ts = np.array([s.t for s in stream])
    if np.any(np.diff(ts) <= 0.0):
        raise ValueError("sensor stream timestamps must be strictly increasing")
    grav = _loess_fit(ts, np.array([s.gravity_accel for s in stream]), bandwidth)
    unwrapped = np.unwrap(np.array([s.heading_deg for s in stream]), period=360.0)
    head = _loess_fit(ts, unwrapped, bandwidth)
    return [
        SensorSample(t=s.t, gravity_accel=float(g), heading_deg=norm_deg(float(h)))
        for s, g, h in zip(stream, grav, head)
    ]


# ----------------------------------------------------------------------
# Speed filter
# ----------------------------------------------------------------------


def estimate_speed(history: Sequence[CleanFix], candidate: RawFix) -> float:
    """Average speed implied by the candidate fix against a history window.

    Mean over the history of distance / |time difference|.  Using several
    past fixes damps the impact of any single noisy one.
    """
    if not history:
        raise ValueError("speed estimation needs at least one prior fix")
    total = 0.0
    for h in history:
        dt = abs(candidate.t - h.t)
        if dt <= 0.0:
            raise ValueError("history timestamps must differ from the candidate's")
        total += geodesic_distance(h.loc, candidate.loc) / dt
    return total / len(history)


def speed_filter(
    stream: Sequence[RawFix],
    config: FilterConfig,
    road_speed_lookup: Optional[Callable[[GeoPoint], Optional[float]]] = None,
) -> list[CleanFix]:
    """Reject fixes implying an impossible speed; rejected fixes keep the
    previous accepted location.

    The threshold is the map speed limit at the fix when a lookup is given,
    else the physical cap, widened by the configured margin.  The first fix
    is always accepted.
    """
    out: list[CleanFix] = []
    for fix in stream:
        if not out:
            out.append(CleanFix(fix.t, fix.loc, fix.err_m))
            continue
        history = [c for c in out if c.t < fix.t][-config.w_s :]
        if not history:
            out.append(CleanFix(fix.t, fix.loc, fix.err_m))
            continue
        speed = estimate_speed(history, fix)
        limit = road_speed_lookup(fix.loc) if road_speed_lookup is not None else None
        threshold = (limit if limit is not None else config.v_max_mps) * (1.0 + config.speed_margin)
        if speed > threshold:
            out.append(CleanFix(fix.t, out[-1].loc, fix.err_m, speed_rejected=True))
        else:
            out.append(CleanFix(fix.t, fix.loc, fix.err_m))
    return out


# ----------------------------------------------------------------------
# Bouncing-locations filter
# ----------------------------------------------------------------------


def spatial_sort_key(
    points: Sequence[GeoPoint], window_bbox: tuple[float, float, float, float]
) -> list[int]:
    """Map points to scalar keys along a row-major grid scan of the bbox.

    ``window_bbox`` is (min_lat, min_lon, max_lat, max_lon).  Points in the
    same grid cell get equal keys; callers break ties by timestamp.  A
    degenerate bbox falls back to sequential (timestamp-order) keys.
    """
    min_lat, min_lon, max_lat, max_lon = window_bbox
    lat_range = max_lat - min_lat
    lon_range = max_lon - min_lon
    eps = 1e-12
    if lat_range <= eps and lon_range <= eps:
        return list(range(len(points)))
    keys = []
    for p in points:
        row = 0 if lat_range <= eps else min(
            SPACE_FILLING_GRID - 1, int((p.lat - min_lat) / lat_range * SPACE_FILLING_GRID)
        )
        col = 0 if lon_range <= eps else min(
            SPACE_FILLING_GRID - 1, int((p.lon - min_lon) / lon_range * SPACE_FILLING_GRID)
        )
        keys.append(row * SPACE_FILLING_GRID + col)
    return keys


def _as_clean(fix: Union[RawFix, CleanFix]) -> CleanFix:
    if isinstance(fix, CleanFix):
        return fix
    return CleanFix(fix.t, fix.loc, fix.err_m)


def trimmed_mean_filter(
    stream: Sequence[Union[RawFix, CleanFix]], alpha: float, w_b: int
) -> list[CleanFix]:
    """Replace each fix by the alpha-trimmed mean of its window neighbors.

    Window members are ordered along the space-filling key (ties by
    timestamp); floor(alpha * w_b) members are dropped from each end of that
    ordering and the rest averaged coordinate-wise.  alpha = 0 reduces to a
    plain windowed mean, alpha = 0.5 to the windowed median.  Streams
    shorter than the window pass through unchanged.
    """
    if not 0.0 <= alpha <= 0.5:
        raise ValueError("alpha must be in [0, 0.5]")
    if w_b < 3 or w_b % 2 == 0:
        raise ValueError("w_b must be odd and >= 3")
    n = len(stream)
    if n < w_b:
        return [_as_clean(f) for f in stream]
    half = w_b // 2
    trim = int(alpha * w_b)
    out: list[CleanFix] = []
    for i in range(n):
        lo = max(0, min(i - half, n - w_b))
        window = stream[lo : lo + w_b]
        locs = [f.loc for f in window]
        bbox = (
            min(p.lat for p in locs),
            min(p.lon for p in locs),
            max(p.lat for p in locs),
            max(p.lon for p in locs),
        )
        keys = spatial_sort_key(locs, bbox)
        order = sorted(range(len(window)), key=lambda j: (keys[j], window[j].t))
        kept = order[trim : len(window) - trim]
        lat = sum(locs[j].lat for j in kept) / len(kept)
        lon = sum(locs[j].lon for j in kept) / len(kept)
        src = _as_clean(stream[i])
        moved = abs(lat - src.loc.lat) > 1e-12 or abs(lon - src.loc.lon) > 1e-12
        out.append(replace(src, loc=GeoPoint(lat, lon), bounce_smoothed=moved))
    return out


# ----------------------------------------------------------------------
# Direction filter
# ----------------------------------------------------------------------


class _HeadingTrack:
    """Interpolated sensor heading over time, in unwrapped angle space."""

    def __init__(self, sensors: Sequence[SensorSample]):
        self._ts = np.array([s.t for s in sensors])
        if len(sensors):
            self._unwrapped = np.unwrap(np.array([s.heading_deg for s in sensors]), period=360.0)
        else:
            self._unwrapped = np.array([])

    def heading_at(self, t: float) -> Optional[float]:
        if len(self._ts) == 0 or t < self._ts[0] or t > self._ts[-1]:
            return None
        return float(np.interp(t, self._ts, self._unwrapped))


def direction_filter(
    fix_stream: Sequence[Union[RawFix, CleanFix]],
    sensor_stream: Sequence[SensorSample],
    config: FilterConfig,
) -> list[CleanFix]:
    """Reject fix-implied direction changes the inertial heading contradicts.

    A turn is indicated when the bearing between consecutive fixes changes
    by more than ``turn_threshold_deg``.  The sensor heading change over the
    same span must reach ``confirm_threshold_deg`` or the fix is rejected
    and pinned to the prior location.  Fixes without sensor coverage pass
    unfiltered but are flagged.
    """
    track = _HeadingTrack(sensor_stream)
    out: list[CleanFix] = []
    for fix in fix_stream:
        clean = _as_clean(fix)
        if len(out) < 2:
            out.append(clean)
            continue
        p0, p1, p2 = out[-2].loc, out[-1].loc, clean.loc
        if (p0.lat == p1.lat and p0.lon == p1.lon) or (p1.lat == p2.lat and p1.lon == p2.lon):
            out.append(clean)
            continue
        db = abs(wrap_deg(bearing(p1, p2) - bearing(p0, p1)))
        if db <= config.turn_threshold_deg:
            out.append(clean)
            continue
        # Compare against the heading change between the two displacement
        # intervals, sampled at their midpoints.
        h1 = track.heading_at((out[-2].t + out[-1].t) / 2.0)
        h2 = track.heading_at((out[-1].t + clean.t) / 2.0)
        if h1 is None or h2 is None:
            out.append(replace(clean, sensor_gap=True))
            continue
        if abs(wrap_deg(h2 - h1)) < config.confirm_threshold_deg:
            out.append(replace(clean, loc=p1, direction_rejected=True))
        else:
            out.append(clean)
    return out


def preprocess_trace(
    fixes: Sequence[RawFix],
    sensors: Sequence[SensorSample],
    config: FilterConfig,
    road_speed_lookup: Optional[Callable[[GeoPoint], Optional[float]]] = None,
) -> list[CleanFix]:
    """Full location pipeline: speed filter, bounce filter, direction filter."""
    smoothed = smooth_sensors(sensors, config.sensor_bandwidth) if sensors else []
    cleaned = speed_filter(fixes, config, road_speed_lookup)
    cleaned = trimmed_mean_filter(cleaned, config.alpha, config.w_b)
    return direction_filter(cleaned, smoothed, config)


# ----------------------------------------------------------------------
# Trace file format (JSON lines)
# ----------------------------------------------------------------------


def read_trace(
    source: Union[str, TextIO],
) -> tuple[list[RawFix], list[SensorSample], list[SemanticEvent]]:
    """Read a JSON-lines trace into fix, sensor and event streams.

    Records are classified by shape: a ``type`` field marks a semantic
    event, else a ``heading_deg`` field marks a sensor sample, else the
    record is a position fix.  Each stream is returned time-sorted.
    """
    if isinstance(source, str):
        with open(source) as fh:
            lines = fh.readlines()
    else:
        lines = source.readlines()
    fixes: list[RawFix] = []
    sensors: list[SensorSample] = []
    events: list[SemanticEvent] = []
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
            if "type" in rec:
                events.append(
                    SemanticEvent(
                        t=float(rec["t"]),
                        loc=GeoPoint(float(rec["lat"]), float(rec["lon"])),
                        err_m=float(rec["err_m"]),
                        heading_deg=float(rec["heading_deg"]),
                        type=SemanticType.from_tag(rec["type"]),
                    )
                )
            elif "heading_deg" in rec:
                sensors.append(
                    SensorSample(
                        t=float(rec["t"]),
                        gravity_accel=float(rec.get("gvar", 0.0)),
                        heading_deg=norm_deg(float(rec["heading_deg"])),
                    )
                )
            else:
                fixes.append(
                    RawFix(
                        t=float(rec["t"]),
                        loc=GeoPoint(float(rec["lat"]), float(rec["lon"])),
                        err_m=float(rec["err_m"]),
                    )
                )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"bad trace record on line {lineno}: {exc}") from exc
    fixes.sort(key=lambda f: f.t)
    sensors.sort(key=lambda s: s.t)
    events.sort(key=lambda e: e.t)
    return fixes, sensors, events


def trace_records(
    fixes: Sequence[RawFix] = (),
    sensors: Sequence[SensorSample] = (),
    events: Sequence[SemanticEvent] = (),
) -> list[dict]:
    """Merge streams into serializable trace records, time-ordered."""
    records = []
    for f in fixes:
        records.append((f.t, 0, {"t": f.t, "lat": f.loc.lat, "lon": f.loc.lon, "err_m": f.err_m}))
    for s in sensors:
        records.append((s.t, 1, {"t": s.t, "heading_deg": s.heading_deg, "gvar": s.gravity_accel}))
    for e in events:
        records.append(
            (
                e.t,
                2,
                {
                    "t": e.t,
                    "lat": e.loc.lat,
                    "lon": e.loc.lon,
                    "err_m": e.err_m,
                    "heading_deg": e.heading_deg,
                    "type": e.type.tag,
                },
            )
        )
    records.sort(key=lambda r: (r[0], r[1]))
    return [r[2] for r in records]


def write_trace(
    path: str,
    fixes: Sequence[RawFix] = (),
    sensors: Sequence[SensorSample] = (),
    events: Sequence[SemanticEvent] = (),
) -> None:
    """Write streams to a JSON-lines trace file."""
    with open(path, "w") as fh:
        for rec in trace_records(fixes, sensors, events):
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
