"""Deterministic synthetic scenes and camera rigs.

Each fixture bundles poses, an analytic field, ground-truth images rendered
with 512 midpoint samples in standard color mode, and metadata describing
the true geometry (orbit centers, plane equations, slab tint, render range).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from nerfpc.assets_io import CameraPose, ImageBuffer, look_at, pixel_rays, save_transforms_json, write_image
from nerfpc.errors import ConfigError
from nerfpc.field.analytic import AnalyticField, Checker, PlaneLayer, Sphere, opaque_density, tinted_slab, two_planes
from nerfpc.volume_render import RenderConfig, render_rays

KINDS = ("single_orbit", "two_orbits", "square_rig", "textured_plane", "two_planes", "tinted_slab_scene")
IMAGE_SAMPLES = 512

_DEFAULTS = {
    "single_orbit": dict(cameras=30, resolution=32, radius=5.0, elevation_deg=30.0, center=(0.0, 0.0, 0.0), object_radius=1.0),
    "two_orbits": dict(cameras=30, resolution=32, radius=5.0, elevation_deg=30.0, separation=40.0, object_radius=1.0),
    "square_rig": dict(cameras=4, resolution=16, distance=1.0, object_radius=0.2),
    "textured_plane": dict(cameras=12, resolution=64, height=2.0, ring_radius=1.0, block=0.25, look_spread=0.3),
    "two_planes": dict(cameras=9, resolution=256, height=10.0, lateral=0.5, focal=1000.0),
    "tinted_slab_scene": dict(cameras=4, resolution=16, height=3.0, lateral=0.05, fov_deg=5.0),
}


@dataclass(frozen=True)
class FixtureSpec:
    kind: str
    params: dict = dc_field(default_factory=dict)
    seed: int = 0

    def resolved(self) -> dict:
        if self.kind not in _DEFAULTS:
            raise ConfigError(f"unknown fixture kind {self.kind!r}; expected one of {', '.join(KINDS)}")
        unknown = set(self.params) - set(_DEFAULTS[self.kind])
        if unknown:
            raise ConfigError(f"unknown {self.kind} parameters: {sorted(unknown)}")
        out = {**_DEFAULTS[self.kind], **self.params}
        if int(out["resolution"]) < 16:
            raise ConfigError("resolution must be at least 16")
        for key, val in out.items():
            if isinstance(val, (int, float)) and key not in ("center",) and not val > 0 and key != "elevation_deg":
                raise ConfigError(f"{key} must be positive")
        return out


@dataclass
class Fixture:
    spec: FixtureSpec
    poses: list[CameraPose]
    field: AnalyticField
    images: list[ImageBuffer]
    metadata: dict

    @property
    def render_config(self) -> RenderConfig:
        r = self.metadata["render"]
        return RenderConfig(near=r["near"], far=r["far"], samples=r["samples"])


def _focal_for_fov(resolution: int, fov_deg: float) -> float:
    return 0.5 * resolution / math.tan(math.radians(fov_deg) / 2)


def _pose(origin, target, res: int, focal: float, pose_id: str, up=(0.0, 0.0, 1.0)) -> CameraPose:
    return CameraPose(np.asarray(origin, float), look_at(origin, target, up), (focal, focal), (res / 2, res / 2), res, res, pose_id)


def _orbit(center, radius, elevation_deg, count, res, focal, phase, prefix):
    center = np.asarray(center, dtype=np.float64)
    el = math.radians(elevation_deg)
    poses = []
    for k in range(count):
        az = phase + 2 * math.pi * k / count
        offset = radius * np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])
        poses.append(_pose(center + offset, center, res, focal, f"{prefix}{k:03d}"))
    return poses


def orbit_focus_truth(center, radius: float, elevation_deg: float) -> dict:
    """True focus cube of a continuous orbit: its center, and the mean L-inf distance to points on the orbit."""
    center = np.asarray(center, dtype=np.float64)
    az = np.linspace(0.0, 2 * math.pi, 100_000, endpoint=False)
    el = math.radians(elevation_deg)
    offs = radius * np.stack([math.cos(el) * np.cos(az), math.cos(el) * np.sin(az), np.full_like(az, math.sin(el))], 1)
    return {"center": center.tolist(), "radius": float(np.abs(offs).max(axis=1).mean())}


def _single_orbit(p, rng):
    res = int(p["resolution"])
    focal = _focal_for_fov(res, 40.0)
    center = np.asarray(p["center"], dtype=np.float64)
    poses = _orbit(center, p["radius"], p["elevation_deg"], int(p["cameras"]), res, focal, rng.uniform(0, 2 * math.pi), "orbit0_")
    sig = opaque_density(2 * p["radius"])
    fld = AnalyticField([Sphere(tuple(center), p["object_radius"], sig, (0.8, 0.5, 0.3))], 2 * p["radius"], "single_orbit")
    meta = {
        "orbits": [{"center": center.tolist(), "radius": p["radius"], "elevation_deg": p["elevation_deg"]}],
        "focus_areas": [orbit_focus_truth(center, p["radius"], p["elevation_deg"])],
        "render": {"near": 0.1 * p["radius"], "far": 2.0 * p["radius"], "samples": IMAGE_SAMPLES},
    }
    return poses, fld, meta


def _two_orbits(p, rng):
    res = int(p["resolution"])
    focal = _focal_for_fov(res, 40.0)
    half = p["separation"] / 2
    centers = [np.array([-half, 0.0, 0.0]), np.array([half, 0.0, 0.0])]
    sig = opaque_density(2 * p["radius"])
    poses, orbits, truth, prims = [], [], [], []
    for i, c in enumerate(centers):
        ring = _orbit(c, p["radius"], p["elevation_deg"], int(p["cameras"]), res, focal, rng.uniform(0, 2 * math.pi), f"orbit{i}_")
        poses += ring
        orbits.append({"center": c.tolist(), "radius": p["radius"], "elevation_deg": p["elevation_deg"]})
        truth.append(orbit_focus_truth(c, p["radius"], p["elevation_deg"]))
        prims.append(Sphere(tuple(c), p["object_radius"], sig, (0.8, 0.5, 0.3) if i == 0 else (0.3, 0.5, 0.8)))
    fld = AnalyticField(prims, 2 * p["radius"], "two_orbits")
    meta = {
        "orbits": orbits,
        "focus_areas": truth,
        "render": {"near": 0.1 * p["radius"], "far": 2.0 * p["radius"], "samples": IMAGE_SAMPLES},
    }
    return poses, fld, meta


def _square_rig(p, rng):
    res = int(p["resolution"])
    focal = _focal_for_fov(res, 30.0)
    d = p["distance"]
    origins = [(d, 0, 0), (0, d, 0), (-d, 0, 0), (0, -d, 0)]
    count = int(p["cameras"])
    poses = [_pose(origins[k % 4], (0, 0, 0), res, focal, f"rig{k:03d}") for k in range(count)]
    fld = AnalyticField([Sphere((0, 0, 0), p["object_radius"], opaque_density(2 * d), (0.9, 0.9, 0.9))], 2 * d, "square_rig")
    meta = {
        "spheres": [{"center": [0.0, 0.0, 0.0], "radius": p["object_radius"]}],
        "render": {"near": 0.05 * d, "far": 2.0 * d, "samples": IMAGE_SAMPLES},
    }
    return poses, fld, meta


def _textured_plane(p, rng):
    res = int(p["resolution"])
    focal = _focal_for_fov(res, 60.0)
    h, ring = p["height"], p["ring_radius"]
    count = int(p["cameras"])
    poses = []
    for k in range(count):
        az = 2 * math.pi * k / count
        origin = np.array([ring * math.cos(az), ring * math.sin(az), h])
        target = rng.uniform(-p["look_spread"], p["look_spread"], 2)
        poses.append(_pose(origin, (target[0], target[1], 0.0), res, focal, f"cam{k:03d}"))
    scale = 2 * h
    checker = Checker(p["block"], (0.85, 0.85, 0.85), (0.15, 0.15, 0.15))
    fld = AnalyticField([PlaneLayer((0, 0, 1), 0.0, opaque_density(scale), checker)], scale, "textured_plane")
    probe = _pose((0.0, 0.0, h), (0.0, 0.0, 0.0), 64, _focal_for_fov(64, 40.0), "probe", up=(0.0, 1.0, 0.0))
    meta = {
        "planes": [{"normal": [0.0, 0.0, 1.0], "offset": 0.0}],
        "checker_block": p["block"],
        "probe": pose_to_dict(probe),
        "render": {"near": 0.25 * h, "far": 3.0 * h, "samples": IMAGE_SAMPLES},
    }
    return poses, fld, meta


def _two_planes(p, rng):
    res = int(p["resolution"])
    h, lat, focal = p["height"], p["lateral"], p["focal"]
    count = int(p["cameras"])
    side = max(1, int(round(math.sqrt(count))))
    grid = np.linspace(-lat, lat, side) if side > 1 else np.zeros(1)
    poses = []
    for k in range(count):
        x, y = grid[k % side], grid[(k // side) % side]
        x, y = (x, y) + rng.uniform(-0.05 * lat, 0.05 * lat, 2)
        origin = np.array([x, y, h])
        poses.append(_pose(origin, (x, y, 0.0), res, focal, f"nadir{k:03d}", up=(0.0, 1.0, 0.0)))
    fld = two_planes(scene_scale=h)
    near_top = 2.0
    meta = {
        "planes": [
            {"normal": [0.0, 0.0, 1.0], "offset": 0.0, "half_extent": 0.75, "role": "far"},
            {"normal": [0.0, 0.0, 1.0], "offset": near_top, "half_extent": 0.3, "thickness": 0.02, "role": "near"},
        ],
        "h_shell": fld.h_shell,
        "render": {"near": h - near_top - 0.5, "far": h + 0.5, "samples": IMAGE_SAMPLES},
    }
    return poses, fld, meta


def _tinted_slab_scene(p, rng):
    res = int(p["resolution"])
    focal = _focal_for_fov(res, p["fov_deg"])
    h = p["height"]
    count = int(p["cameras"])
    poses = []
    for k in range(count):
        x, y = rng.uniform(-p["lateral"], p["lateral"], 2)
        poses.append(_pose((x, y, h), (x, y, 0.0), res, focal, f"slab{k:03d}", up=(0.0, 1.0, 0.0)))
    fld = tinted_slab(scene_scale=h)
    meta = {
        "planes": [{"normal": [0.0, 0.0, 1.0], "offset": 0.0, "albedo": [1.0, 1.0, 1.0]}],
        "slab": {"near": 1.75, "far": 1.25, "tint": [0.0, 0.0, 1.0], "foreground_weight": 0.3},
        "render": {"near": 1.0, "far": h + 0.2, "samples": IMAGE_SAMPLES},
    }
    return poses, fld, meta


_BUILDERS = {
    "single_orbit": _single_orbit,
    "two_orbits": _two_orbits,
    "square_rig": _square_rig,
    "textured_plane": _textured_plane,
    "two_planes": _two_planes,
    "tinted_slab_scene": _tinted_slab_scene,
}


def render_images(fld, poses, config: RenderConfig) -> list[ImageBuffer]:
    images = []
    for pose in poses:
        ys, xs = np.mgrid[0 : pose.height, 0 : pose.width]
        pix = np.stack([xs.ravel(), ys.ravel()], 1) + 0.5
        o, d = pixel_rays(pose, pix)
        out = render_rays(fld, o, d, config)
        images.append(ImageBuffer(out.color.reshape(pose.height, pose.width, 3)))
    return images


def build_fixture(spec: FixtureSpec, with_images: bool = True) -> Fixture:
    params = spec.resolved()
    rng = np.random.Generator(np.random.Philox(spec.seed))
    poses, fld, meta = _BUILDERS[spec.kind](params, rng)
    meta = {"kind": spec.kind, "seed": spec.seed, "params": _jsonable(params), **meta}
    fixture = Fixture(spec, poses, fld, [], meta)
    if with_images:
        fixture.images = render_images(fld, poses, fixture.render_config)
    return fixture


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def pose_to_dict(pose: CameraPose) -> dict:
    return {
        "id": pose.id,
        "origin": pose.origin.tolist(),
        "rotation": pose.rotation.tolist(),
        "focal": list(pose.focal),
        "principal_point": list(pose.principal_point),
        "width": pose.width,
        "height": pose.height,
    }


def pose_from_dict(d: dict) -> CameraPose:
    return CameraPose(
        np.array(d["origin"]), np.array(d["rotation"]), tuple(d["focal"]), tuple(d["principal_point"]), d["width"], d["height"], d["id"]
    )


def plane_ray_depth(origins, directions, normal, offset) -> np.ndarray:
    """Distance along unit rays to the plane ``normal . p = offset`` (inf when parallel or behind)."""
    n = np.asarray(normal, dtype=np.float64)
    n = n / np.linalg.norm(n)
    denom = directions @ n
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (offset - origins @ n) / denom
    return np.where((np.abs(denom) > 1e-12) & (t > 0), t, np.inf)


def write_fixture(fixture: Fixture, out_dir) -> None:
    """Poses, images, ground-truth focus areas and the field description under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "images").mkdir(exist_ok=True)
    named = []
    for pose, image in zip(fixture.poses, fixture.images):
        name = f"images/{pose.id}.png"
        write_image(out / name, image)
        named.append(CameraPose(pose.origin, pose.rotation, pose.focal, pose.principal_point, pose.width, pose.height, name))
    save_transforms_json(named or fixture.poses, out / "transforms.json")
    truth = fixture.metadata.get("focus_areas", [])
    (out / "areas_truth.json").write_text(json.dumps(truth, indent=2, sort_keys=True) + "\n")
    (out / "field.json").write_text(json.dumps(fixture.field.to_dict(), indent=2, sort_keys=True) + "\n")
    (out / "metadata.json").write_text(json.dumps(_jsonable(fixture.metadata), indent=2, sort_keys=True) + "\n")
