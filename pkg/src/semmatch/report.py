"""Figure rendering for CLI reports.

Each command saves a PNG next to its delimited output.  The Agg backend is
forced and PNG metadata is stripped so identical runs produce byte-identical
files.
"""

from __future__ import annotations

from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from semmatch.metrics import Score
from semmatch.preprocess import RawFix
from semmatch.roadnet import HiddenState, RoadNetwork
from semmatch.semantics import SemanticEvent

# Dropping the Software key keeps PNG bytes stable across runs.
_PNG_METADATA = {"Software": None}


def _draw_network(ax, network: RoadNetwork) -> None:
    for sid in sorted(network.segments):
        seg = network.segments[sid]
        ax.plot(
            [p.lon for p in seg.polyline],
            [p.lat for p in seg.polyline],
            color="0.8",
            linewidth=0.8,
            zorder=1,
        )
    if network.state_space:
        ax.scatter(
            [s.loc.lon for s in network.state_space],
            [s.loc.lat for s in network.state_space],
            s=4,
            color="0.6",
            marker=".",
            zorder=2,
            label="landmarks",
        )


def save_match_figure(
    path: str,
    network: RoadNetwork,
    decoded: Sequence[HiddenState],
    raw_fixes: Sequence[RawFix] = (),
    events: Sequence[SemanticEvent] = (),
    truth_lonlat: Optional[Sequence[tuple[float, float]]] = None,
) -> None:
    """Map view: network, input noise, and the decoded landmark path."""
    fig, ax = plt.subplots(figsize=(7, 7))
    _draw_network(ax, network)
    if raw_fixes:
        ax.plot(
            [f.loc.lon for f in raw_fixes],
            [f.loc.lat for f in raw_fixes],
            "x--",
            color="tab:red",
            linewidth=0.6,
            markersize=4,
            label="raw fixes",
            zorder=3,
        )
    if events:
        ax.scatter(
            [e.loc.lon for e in events],
            [e.loc.lat for e in events],
            s=12,
            color="tab:orange",
            marker="o",
            label="semantic events",
            zorder=4,
        )
    if truth_lonlat:
        ax.plot(
            [lon for lon, _ in truth_lonlat],
            [lat for _, lat in truth_lonlat],
            color="tab:green",
            linewidth=1.2,
            label="ground truth",
            zorder=5,
        )
    if decoded:
        ax.plot(
            [s.loc.lon for s in decoded],
            [s.loc.lat for s in decoded],
            "-o",
            color="tab:blue",
            linewidth=1.5,
            markersize=4,
            label="matched path",
            zorder=6,
        )
    ax.set_xlabel("longitude")
    ax.set_ylabel("latitude")
    ax.set_title("map matching result")
    ax.legend(loc="best", fontsize=8)
    ax.set_aspect("equal", adjustable="datalim")
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_METADATA)
    plt.close(fig)


def save_scores_figure(path: str, scores: Sequence[tuple[str, Score]]) -> None:
    """Bar chart of precision / recall / F per trace."""
    fig, ax = plt.subplots(figsize=(max(4.0, 1.5 * len(scores) + 2.0), 4))
    labels = [label for label, _ in scores]
    xs = range(len(scores))
    width = 0.27
    ax.bar([x - width for x in xs], [s.precision for _, s in scores], width, label="precision")
    ax.bar(list(xs), [s.recall for _, s in scores], width, label="recall")
    ax.bar([x + width for x in xs], [s.f_measure for _, s in scores], width, label="F-measure")
    ax.set_xticks(list(xs))
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("score")
    ax.set_title("map matching quality")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_METADATA)
    plt.close(fig)


def save_simulation_figure(
    path: str,
    network: RoadNetwork,
    truth_lonlat: Sequence[tuple[float, float]],
    raw_fixes: Sequence[RawFix],
    events: Sequence[SemanticEvent] = (),
) -> None:
    """Map view of a simulated drive: truth route and corrupted fixes."""
    fig, ax = plt.subplots(figsize=(7, 7))
    _draw_network(ax, network)
    ax.plot(
        [lon for lon, _ in truth_lonlat],
        [lat for _, lat in truth_lonlat],
        color="tab:green",
        linewidth=1.4,
        label="truth route",
        zorder=3,
    )
    if raw_fixes:
        ax.plot(
            [f.loc.lon for f in raw_fixes],
            [f.loc.lat for f in raw_fixes],
            "x--",
            color="tab:red",
            linewidth=0.6,
            markersize=4,
            label="noisy fixes",
            zorder=4,
        )
    if events:
        ax.scatter(
            [e.loc.lon for e in events],
            [e.loc.lat for e in events],
            s=12,
            color="tab:orange",
            marker="o",
            label="semantic events",
            zorder=5,
        )
    ax.set_xlabel("longitude")
    ax.set_ylabel("latitude")
    ax.set_title("simulated drive")
    ax.legend(loc="best", fontsize=8)
    ax.set_aspect("equal", adjustable="datalim")
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_METADATA)
    plt.close(fig)
