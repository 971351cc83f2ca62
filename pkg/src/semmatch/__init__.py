"""Road-semantics HMM map matching for sparse, noisy positioning traces."""

__version__ = "0.1.0"

from semmatch.roadnet import (
    GeoPoint,
    HiddenState,
    RoadNetwork,
    RoadSegment,
    SemanticLandmark,
    SemanticType,
    bearing,
    geodesic_distance,
    load_network,
)

__all__ = [
    "GeoPoint",
    "HiddenState",
    "RoadNetwork",
    "RoadSegment",
    "SemanticLandmark",
    "SemanticType",
    "bearing",
    "geodesic_distance",
    "load_network",
]
