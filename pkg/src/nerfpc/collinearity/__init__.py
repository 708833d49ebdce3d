from nerfpc.collinearity.edges import EdgeMap, detect_edges
from nerfpc.collinearity.loss import CollinearityParams, collinearity_loss, color_weight, expected_midpoint_depth
from nerfpc.collinearity.triplets import (
    PixelTriplet,
    SegmentTable,
    TripletBatch,
    bresenham,
    sample_triplet,
    sample_triplets,
    triplet_stream,
)

__all__ = [
    "CollinearityParams",
    "EdgeMap",
    "PixelTriplet",
    "SegmentTable",
    "TripletBatch",
    "bresenham",
    "collinearity_loss",
    "color_weight",
    "detect_edges",
    "expected_midpoint_depth",
    "sample_triplet",
    "sample_triplets",
    "triplet_stream",
]
