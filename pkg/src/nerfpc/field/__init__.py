from nerfpc.field.analytic import AnalyticField, opaque_box, opaque_plane, opaque_sphere, tinted_slab, two_planes
from nerfpc.field.toy import ToyFieldConfig, ToyHashField, build_toy_field

__all__ = [
    "AnalyticField",
    "ToyFieldConfig",
    "ToyHashField",
    "build_toy_field",
    "opaque_box",
    "opaque_plane",
    "opaque_sphere",
    "tinted_slab",
    "two_planes",
]
