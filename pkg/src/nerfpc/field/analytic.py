"""Analytic radiance fields with closed-form geometry.

Every field is a union of density primitives. Opaque primitives use a density
of ``1e4 / scene_scale`` so a single sample inside them is effectively
opaque. Colors are density-weighted averages of the primitives covering a
point, so overlapping primitives blend the way a volume would.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np


def opaque_density(scene_scale: float) -> float:
    return 1e4 / scene_scale


def shell_thickness(scene_scale: float) -> float:
    return 1e-3 * scene_scale


@dataclass(frozen=True)
class Checker:
    """Two-color checkerboard on the plane spanned by ``u_axis`` and ``v_axis``."""

    size: float
    color_a: tuple = (0.9, 0.9, 0.9)
    color_b: tuple = (0.1, 0.1, 0.1)
    origin: tuple = (0.0, 0.0, 0.0)
    u_axis: tuple = (1.0, 0.0, 0.0)
    v_axis: tuple = (0.0, 1.0, 0.0)

    def __call__(self, pos: np.ndarray) -> np.ndarray:
        rel = pos - np.asarray(self.origin)
        u = np.floor(rel @ np.asarray(self.u_axis) / self.size).astype(np.int64)
        v = np.floor(rel @ np.asarray(self.v_axis) / self.size).astype(np.int64)
        odd = ((u + v) % 2).astype(bool)
        return np.where(odd[:, None], np.asarray(self.color_b), np.asarray(self.color_a))


def _color_at(color, pos: np.ndarray) -> np.ndarray:
    if isinstance(color, Checker):
        return color(pos)
    return np.broadcast_to(np.asarray(color, dtype=np.float64), pos.shape)


@dataclass(frozen=True)
class PlaneLayer:
    """Region ``offset - thickness <= normal . p <= offset``; ``normal`` points to free space."""

    normal: tuple
    offset: float
    density: float
    color: object = (1.0, 1.0, 1.0)
    thickness: float = np.inf

    def inside(self, pos):
        n = np.asarray(self.normal, dtype=np.float64)
        n = n / np.linalg.norm(n)
        h = pos @ n
        return (h <= self.offset) & (h >= self.offset - self.thickness)


@dataclass(frozen=True)
class Sphere:
    center: tuple
    radius: float
    density: float
    color: object = (1.0, 1.0, 1.0)
    thickness: float = np.inf

    def inside(self, pos):
        r = np.linalg.norm(pos - np.asarray(self.center), axis=1)
        return (r <= self.radius) & (r >= self.radius - self.thickness)


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple
    density: float
    color: object = (1.0, 1.0, 1.0)

    def inside(self, pos):
        return np.all((pos >= np.asarray(self.lo)) & (pos <= np.asarray(self.hi)), axis=1)


@dataclass(frozen=True)
class Fuzz:
    """Density ``peak * exp(-dist / falloff)`` around a core box, clipped to ``bound_lo..bound_hi``.

    Mimics the smeared density a learned field leaves at occluder silhouettes.
    """

    core_lo: tuple
    core_hi: tuple
    bound_lo: tuple
    bound_hi: tuple
    peak: float
    falloff: float
    color: object = (0.5, 0.5, 0.5)

    def density_at(self, pos):
        lo, hi = np.asarray(self.core_lo), np.asarray(self.core_hi)
        gap = np.maximum(np.maximum(lo - pos, pos - hi), 0.0)
        dist = np.linalg.norm(gap, axis=1)
        within = np.all((pos >= np.asarray(self.bound_lo)) & (pos <= np.asarray(self.bound_hi)), axis=1)
        return np.where(within, self.peak * np.exp(-dist / self.falloff), 0.0)


_KINDS = {"plane": PlaneLayer, "sphere": Sphere, "box": Box, "fuzz": Fuzz}


class AnalyticField:
    """Union of primitives queried as ``(density, color)`` per point."""

    def __init__(self, primitives: Sequence, scene_scale: float = 1.0, name: str = "analytic"):
        self.primitives = list(primitives)
        self.scene_scale = float(scene_scale)
        self.name = name

    @property
    def h_shell(self) -> float:
        return shell_thickness(self.scene_scale)

    @property
    def sigma_opaque(self) -> float:
        return opaque_density(self.scene_scale)

    def query(self, positions, directions=None):
        pos = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        sigma = np.zeros(len(pos))
        weighted = np.zeros((len(pos), 3))
        for prim in self.primitives:
            if isinstance(prim, Fuzz):
                s = prim.density_at(pos)
                mask = s > 0
            else:
                mask = prim.inside(pos)
                s = np.where(mask, prim.density, 0.0)
            if not mask.any():
                continue
            sigma += s
            weighted[mask] += s[mask, None] * _color_at(prim.color, pos[mask])
        color = np.divide(weighted, sigma[:, None], out=np.zeros_like(weighted), where=sigma[:, None] > 0)
        return sigma, np.clip(color, 0.0, 1.0)

    def to_dict(self) -> dict:
        prims = []
        for p in self.primitives:
            d = asdict(p)
            if isinstance(p.color, Checker):
                d["color"] = {"checker": asdict(p.color)}
            d = {k: (None if isinstance(v, float) and np.isinf(v) else v) for k, v in d.items()}
            prims.append({"kind": next(k for k, c in _KINDS.items() if isinstance(p, c)), **d})
        return {"name": self.name, "scene_scale": self.scene_scale, "primitives": prims}

    @classmethod
    def from_dict(cls, payload: dict) -> "AnalyticField":
        prims = []
        for entry in payload["primitives"]:
            entry = dict(entry)
            kind = _KINDS[entry.pop("kind")]
            if isinstance(entry.get("color"), dict):
                entry["color"] = Checker(**{k: tuple(v) if isinstance(v, list) else v for k, v in entry["color"]["checker"].items()})
            if "thickness" in entry and entry["thickness"] is None:
                entry["thickness"] = np.inf
            entry = {k: tuple(v) if isinstance(v, list) else v for k, v in entry.items()}
            prims.append(kind(**entry))
        return cls(prims, payload["scene_scale"], payload.get("name", "analytic"))


# ---------------------------------------------------------------------------
# variants


def opaque_plane(normal, offset: float, albedo=(1.0, 1.0, 1.0), scene_scale: float = 10.0) -> AnalyticField:
    return AnalyticField([PlaneLayer(tuple(normal), offset, opaque_density(scene_scale), albedo)], scene_scale, "opaque_plane")


def opaque_sphere(center, radius: float, albedo=(1.0, 1.0, 1.0), scene_scale: float = 10.0) -> AnalyticField:
    return AnalyticField([Sphere(tuple(center), radius, opaque_density(scene_scale), albedo)], scene_scale, "opaque_sphere")


def opaque_box(lo, hi, albedo=(1.0, 1.0, 1.0), scene_scale: float = 10.0) -> AnalyticField:
    return AnalyticField([Box(tuple(lo), tuple(hi), opaque_density(scene_scale), albedo)], scene_scale, "opaque_box")


def tinted_slab(
    normal=(0.0, 0.0, 1.0),
    backing_offset: float = 0.0,
    slab_near: float = 1.75,
    slab_far: float = 1.25,
    foreground_weight: float = 0.3,
    tint=(0.0, 0.0, 1.0),
    albedo=(1.0, 1.0, 1.0),
    scene_scale: float = 10.0,
) -> AnalyticField:
    """Translucent tinted layer between heights ``slab_far..slab_near`` over an opaque backing plane.

    The layer density is chosen so a ray along ``-normal`` loses
    ``foreground_weight`` of its transmittance inside the layer.
    """
    thick = slab_near - slab_far
    sigma = -np.log1p(-foreground_weight) / thick
    return AnalyticField(
        [
            PlaneLayer(tuple(normal), slab_near, sigma, tuple(tint), thick),
            PlaneLayer(tuple(normal), backing_offset, opaque_density(scene_scale), tuple(albedo)),
        ],
        scene_scale,
        "tinted_slab",
    )


def two_planes(
    far_half: float = 0.75,
    far_depth: float = 0.3,
    near_half: float = 0.3,
    near_height: float = 2.0,
    near_thickness: float = 0.02,
    fuzz_peak: float = 140.0,
    fuzz_falloff: float = 0.01,
    near_albedo=(0.9, 0.2, 0.2),
    far_albedo=(0.2, 0.6, 0.9),
    scene_scale: float = 10.0,
) -> AnalyticField:
    """Finite near plate hovering over a finite far plate, with silhouette fuzz between them.

    Plates face ``+z``: the far plate's top is ``z = 0`` and the near plate's
    top is ``z = near_height``.
    """
    sig = opaque_density(scene_scale)
    margin = 12 * fuzz_falloff
    prims = [
        Box((-far_half, -far_half, -far_depth), (far_half, far_half, 0.0), sig, tuple(far_albedo)),
        Box((-near_half, -near_half, near_height - near_thickness), (near_half, near_half, near_height), sig, tuple(near_albedo)),
    ]
    if fuzz_peak > 0:
        prims.append(
            Fuzz(
                (-near_half, -near_half, 0.0),
                (near_half, near_half, near_height),
                (-near_half - margin, -near_half - margin, 0.0),
                (near_half + margin, near_half + margin, near_height),
                fuzz_peak,
                fuzz_falloff,
            )
        )
    return AnalyticField(prims, scene_scale, "two_planes")
