"""Trajectory-level scoring: common segment sequence, precision, recall, F.

Two matched trajectories are compared by the longest common subsequence of
their segment-id sequences, weighted by traversed distance; ordering
matters, so a reordered match does not count.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from semmatch.roadnet import HiddenState, RoadNetwork


class SegmentPath:
    """An ordered sequence of (segment id, traversed length) entries.

    Consecutive duplicate ids are merged (lengths summed); every traversed
    length must be positive.
    """

    def __init__(self, entries: Iterable[tuple[str, float]] = ()):
        merged: list[tuple[str, float]] = []
        for sid, length in entries:
            length = float(length)
            if length <= 0.0:
                raise ValueError(f"segment {sid}: traversed length must be positive")
            if merged and merged[-1][0] == sid:
                merged[-1] = (sid, merged[-1][1] + length)
            else:
                merged.append((str(sid), length))
        self.entries: tuple[tuple[str, float], ...] = tuple(merged)

    @property
    def ids(self) -> list[str]:
        return [sid for sid, _ in self.entries]

    @property
    def total_length_m(self) -> float:
        return sum(length for _, length in self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __eq__(self, other) -> bool:
        return isinstance(other, SegmentPath) and self.entries == other.entries

    def __repr__(self) -> str:
        return f"SegmentPath({list(self.entries)!r})"


def segment_path_from_states(network: RoadNetwork, states: Sequence[HiddenState]) -> SegmentPath:
    """Build the matched segment path from a decoded state sequence.

    A run of consecutive states on one segment contributes that segment once
    with its full length; decoded landmarks do not pin down entry and exit
    points, so whole-segment lengths are the consistent choice.
    """
    ids: list[str] = []
    for s in states:
        if not ids or ids[-1] != s.segment_id:
            ids.append(s.segment_id)
    return SegmentPath((sid, network.segments[sid].length_m) for sid in ids)


@dataclass(frozen=True)
class Score:
    """Distance-weighted precision/recall/F plus the underlying distances."""

    precision: float
    recall: float
    f_measure: float
    x_m: float  # common-sequence distance
    y_m: float  # output distance not on the common sequence
    g_m: float  # ground-truth total distance
    empty_output: bool = False


def common_sequence(output: SegmentPath, truth: SegmentPath) -> tuple[float, list[str]]:
    """Longest common subsequence of segment ids, maximizing matched distance.

    A matched pair contributes the smaller of the two traversed lengths.
    Returns (matched distance X in meters, matched id subsequence).
    """
    a, b = output.entries, truth.entries
    n, m = len(a), len(b)
    # dp[i][j] = best matched distance for a[:i] vs b[:j]
    dp = [[0.0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        row = dp[i]
        prev = dp[i - 1]
        for j in range(1, m + 1):
            best = prev[j] if prev[j] >= row[j - 1] else row[j - 1]
            if a[i - 1][0] == b[j - 1][0]:
                take = prev[j - 1] + min(a[i - 1][1], b[j - 1][1])
                if take > best:
                    best = take
            row[j] = best
    # Recover one maximizing subsequence (prefer the diagonal on ties).
    ids: list[str] = []
    i, j = n, m
    while i > 0 and j > 0:
        if a[i - 1][0] == b[j - 1][0] and dp[i][j] == dp[i - 1][j - 1] + min(
            a[i - 1][1], b[j - 1][1]
        ):
            ids.append(a[i - 1][0])
            i -= 1
            j -= 1
        elif dp[i - 1][j] >= dp[i][j - 1]:
            i -= 1
        else:
            j -= 1
    ids.reverse()
    return dp[n][m], ids


def score(output: SegmentPath, truth: SegmentPath) -> Score:
    """Score a matched trajectory against ground truth.

    precision = X / output length, recall = X / truth length, F is their
    harmonic mean.  An empty output is scored (0, 0, 0) and flagged.
    """
    g = truth.total_length_m
    if g <= 0.0:
        raise ValueError("ground-truth path must have positive length")
    if len(output) == 0:
        return Score(0.0, 0.0, 0.0, x_m=0.0, y_m=0.0, g_m=g, empty_output=True)
    x, _ = common_sequence(output, truth)
    out_total = output.total_length_m
    precision = x / out_total
    recall = x / g
    f = 0.0 if precision + recall == 0.0 else 2.0 * precision * recall / (precision + recall)
    return Score(precision, recall, f, x_m=x, y_m=out_total - x, g_m=g)
