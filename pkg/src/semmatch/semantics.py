"""Semantic event classification and the detector probability model.

The detector's behavior is summarized by a row-stochastic confusion matrix:
rows are true landmark classes, columns are detected classes plus a final
"no class" column for misses.  The map matcher consumes these probabilities
both as emission weights and as skipped-landmark penalties.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from semmatch.roadnet import LANDMARK_TYPES, GeoPoint, SemanticType

# Detected-class column order: the seven landmark classes, then the miss
# ("no class") column.
DETECTED_TYPES: tuple[SemanticType, ...] = LANDMARK_TYPES + (SemanticType.NO_CLASS,)

_ROW_INDEX = {t: i for i, t in enumerate(LANDMARK_TYPES)}
_COL_INDEX = {t: i for i, t in enumerate(DETECTED_TYPES)}

# Default detection counts from in-vehicle calibration drives, one row per
# true class (cats_eye, bump, curve, bridge, tunnel, turn, u_turn).
DEFAULT_CONFUSION_COUNTS = np.array(
    [
        [22, 0, 0, 0, 0, 0, 0, 5],
        [0, 37, 0, 0, 0, 0, 0, 0],
        [0, 0, 33, 0, 0, 0, 0, 0],
        [0, 0, 0, 11, 0, 0, 0, 3],
        [0, 0, 0, 0, 15, 0, 0, 0],
        [0, 0, 0, 0, 0, 55, 0, 0],
        [0, 0, 0, 0, 0, 0, 12, 0],
    ],
    dtype=float,
)

DEFAULT_SMOOTHING = 0.5


@dataclass(frozen=True)
class SemanticEvent:
    """A detected road semantic: when, where (with error), heading and type."""

    t: float
    loc: GeoPoint
    err_m: float
    heading_deg: float
    type: SemanticType

    def __post_init__(self):
        if self.err_m <= 0.0:
            raise ValueError("event location error must be positive")


class ConfusionMatrix:
    """Class-conditional detection probabilities p(detected | true)."""

    def __init__(self, probs: np.ndarray):
        probs = np.array(probs, dtype=float)
        if probs.shape != (len(LANDMARK_TYPES), len(DETECTED_TYPES)):
            raise ValueError(f"confusion matrix must be {len(LANDMARK_TYPES)}x{len(DETECTED_TYPES)}")
        if np.any(probs < 0.0):
            raise ValueError("confusion probabilities must be non-negative")
        if not np.allclose(probs.sum(axis=1), 1.0, atol=1e-9):
            raise ValueError("confusion matrix rows must sum to 1")
        self.probs = probs
        self.probs.flags.writeable = False

    def prob(self, detected: SemanticType, true_type: SemanticType) -> float:
        if true_type is SemanticType.NO_CLASS:
            raise ValueError("NO_CLASS is not a landmark class")
        return float(self.probs[_ROW_INDEX[true_type], _COL_INDEX[detected]])

    def miss(self, true_type: SemanticType) -> float:
        return self.prob(SemanticType.NO_CLASS, true_type)

    def row(self, true_type: SemanticType) -> np.ndarray:
        if true_type is SemanticType.NO_CLASS:
            raise ValueError("NO_CLASS is not a landmark class")
        return self.probs[_ROW_INDEX[true_type]]


def build_confusion(
    counts: Optional[np.ndarray] = None, epsilon: float = DEFAULT_SMOOTHING
) -> ConfusionMatrix:
    """Row-normalize (counts + epsilon) into a ConfusionMatrix.

    ``epsilon`` is added to every cell so that, with epsilon > 0, no
    detection outcome has exactly zero probability.  Defaults to the
    embedded calibration counts.
    """
    if counts is None:
        counts = DEFAULT_CONFUSION_COUNTS
    counts = np.asarray(counts, dtype=float)
    if counts.shape != DEFAULT_CONFUSION_COUNTS.shape:
        raise ValueError(f"counts must have shape {DEFAULT_CONFUSION_COUNTS.shape}")
    if np.any(counts < 0.0):
        raise ValueError("counts must be non-negative")
    if epsilon < 0.0:
        raise ValueError("smoothing must be non-negative")
    row_sums = counts.sum(axis=1)
    if np.any(row_sums <= 0.0):
        bad = LANDMARK_TYPES[int(np.argmin(row_sums))]
        raise ValueError(f"confusion row for {bad.tag} has zero total count")
    smoothed = counts + epsilon
    return ConfusionMatrix(smoothed / smoothed.sum(axis=1, keepdims=True))


def detection_prob(m: ConfusionMatrix, detected: SemanticType, true_type: SemanticType) -> float:
    """p(detected | true landmark class)."""
    return m.prob(detected, true_type)


def miss_prob(m: ConfusionMatrix, true_type: SemanticType) -> float:
    """Probability of passing the landmark without detecting anything."""
    return m.miss(true_type)


def load_confusion_csv(source: Union[str, io.TextIOBase]) -> np.ndarray:
    """Read a confusion count matrix from CSV.

    Expected layout: a header row naming the detected classes (seven landmark
    tags plus ``no_class``), then one row per true class starting with its
    tag.  Returns the raw count array; pass it to :func:`build_confusion`.
    """
    if isinstance(source, str):
        with open(source, newline="") as fh:
            rows = list(csv.reader(fh))
    else:
        rows = list(csv.reader(source))
    if len(rows) != len(LANDMARK_TYPES) + 1:
        raise ValueError(f"expected {len(LANDMARK_TYPES) + 1} CSV rows, got {len(rows)}")
    header = [c.strip() for c in rows[0][1:]]
    expected = [t.tag for t in DETECTED_TYPES]
    if header != expected:
        raise ValueError(f"CSV header must be {expected}, got {header}")
    counts = np.zeros_like(DEFAULT_CONFUSION_COUNTS)
    for row in rows[1:]:
        tag = row[0].strip()
        true_type = SemanticType.from_tag(tag)
        if true_type is SemanticType.NO_CLASS:
            raise ValueError("no_class cannot appear as a true-class row")
        counts[_ROW_INDEX[true_type]] = [float(c) for c in row[1:]]
    return counts


def confusion_counts_csv(counts: np.ndarray) -> str:
    """Render a count matrix in the CSV layout load_confusion_csv reads."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow([""] + [t.tag for t in DETECTED_TYPES])
    for i, t in enumerate(LANDMARK_TYPES):
        writer.writerow([t.tag] + [f"{c:g}" for c in counts[i]])
    return buf.getvalue()


# ----------------------------------------------------------------------
# Decision-tree event classifier
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class FeatureVector:
    """Per-event feature summary fed to the classifier.

    gravity_variance: variance of the vertical gravity channel over the
        event window, (m/s^2)^2.
    heading_change_deg: signed heading change integrated over the window.
    duration_s: event window length.
    elevation_cue: up-then-down pattern indicator (positive for a rise
        followed by a fall, as over a bridge deck).
    gps_visibility: whether satellite fixes were available in the window.
    """

    gravity_variance: float
    heading_change_deg: float
    duration_s: float
    elevation_cue: float = 0.0
    gps_visibility: bool = True

    def __post_init__(self):
        if self.duration_s <= 0.0:
            raise ValueError("event duration must be positive")


@dataclass(frozen=True)
class TreeThresholds:
    """Branch thresholds of the semantic decision tree."""

    uturn_lo_deg: float = 150.0
    uturn_hi_deg: float = 210.0
    turn_lo_deg: float = 60.0
    turn_hi_deg: float = 120.0
    curve_lo_deg: float = 20.0
    curve_min_duration_s: float = 5.0
    bridge_elevation_cue: float = 0.5
    bump_min_gravity_var: float = 2.0
    bump_max_duration_s: float = 2.0
    catseye_min_gravity_var: float = 0.5


DEFAULT_THRESHOLDS = TreeThresholds()


def classify(f: FeatureVector, thresholds: TreeThresholds = DEFAULT_THRESHOLDS) -> SemanticType:
    """Deterministic decision-tree classification of one event window.

    Branch order: GPS loss first (tunnels are unambiguous), then heading
    magnitude (u-turn, turn, sustained curve), then elevation (bridge), then
    the vertical-shock split between bumps (hard, short) and cat's eyes
    (lighter).  Falls through to NO_CLASS.
    """
    th = thresholds
    if not f.gps_visibility:
        return SemanticType.TUNNEL
    turn_mag = abs(f.heading_change_deg)
    if th.uturn_lo_deg <= turn_mag <= th.uturn_hi_deg:
        return SemanticType.U_TURN
    if th.turn_lo_deg <= turn_mag <= th.turn_hi_deg:
        return SemanticType.TURN
    if th.curve_lo_deg <= turn_mag < th.turn_lo_deg and f.duration_s > th.curve_min_duration_s:
        return SemanticType.CURVE
    if f.elevation_cue >= th.bridge_elevation_cue:
        return SemanticType.BRIDGE
    if f.gravity_variance >= th.bump_min_gravity_var and f.duration_s <= th.bump_max_duration_s:
        return SemanticType.BUMP
    if f.gravity_variance >= th.catseye_min_gravity_var:
        return SemanticType.CATS_EYE
    return SemanticType.NO_CLASS
