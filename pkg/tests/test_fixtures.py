import json

import numpy as np
import pytest

from nerfpc.assets_io import load_poses, pixel_rays, read_image
from nerfpc.collinearity.edges import detect_edges
from nerfpc.errors import ConfigError
from nerfpc.fixtures import KINDS, FixtureSpec, build_fixture, plane_ray_depth, write_fixture
from nerfpc.volume_render import render_rays


def sphere_depth(origin, direction, center, radius):
    oc = origin - np.asarray(center)
    b = direction @ oc
    disc = b * b - (oc @ oc - radius**2)
    return -b - np.sqrt(disc) if disc >= 0 else np.inf


def analytic_depth(fx, origin, direction):
    meta, params = fx.metadata, fx.metadata["params"]
    if "orbits" in meta:
        return min(sphere_depth(origin, direction, o["center"], params["object_radius"]) for o in meta["orbits"])
    if "spheres" in meta:
        return min(sphere_depth(origin, direction, s["center"], s["radius"]) for s in meta["spheres"])
    best = np.inf
    for plane in meta["planes"]:
        t = float(plane_ray_depth(origin[None], direction[None], plane["normal"], plane["offset"])[0])
        hit = origin + t * direction
        if "half_extent" in plane and np.abs(hit[:2]).max() > plane["half_extent"]:
            continue
        best = min(best, t)
    return best


def test_single_orbit_cameras_look_at_the_center():
    fx = build_fixture(FixtureSpec("single_orbit", {"cameras": 30, "radius": 5.0}), with_images=False)
    center = np.array(fx.metadata["orbits"][0]["center"])
    assert len(fx.poses) == 30
    for pose in fx.poses:
        u = pose.viewing_direction
        rel = center - pose.origin
        assert np.linalg.norm(rel - (rel @ u) * u) < 1e-9
        assert np.linalg.norm(pose.origin - center) == pytest.approx(5.0, abs=1e-12)


@pytest.mark.parametrize("kind", KINDS)
def test_fixtures_are_bit_reproducible(kind):
    params = {"resolution": 16} if kind in ("textured_plane", "two_planes") else {}
    a = build_fixture(FixtureSpec(kind, params, seed=3))
    b = build_fixture(FixtureSpec(kind, params, seed=3))
    assert a.metadata == b.metadata
    for p, q in zip(a.poses, b.poses):
        assert np.array_equal(p.origin, q.origin) and np.array_equal(p.rotation, q.rotation)
    for x, y in zip(a.images, b.images):
        assert np.array_equal(x.data, y.data)


@pytest.mark.parametrize("kind", KINDS)
def test_principal_ray_depth_matches_geometry(kind):
    fx = build_fixture(FixtureSpec(kind), with_images=False)
    cfg = fx.render_config
    for pose in fx.poses:
        o, d = pixel_rays(pose, [pose.principal_point])
        truth = analytic_depth(fx, o[0], d[0])
        depth = render_rays(fx.field, o, d, cfg).depth[0]
        assert np.isfinite(truth)
        assert abs(depth - truth) <= 1.5 * cfg.spacing()


def test_checkerboard_edges_sit_on_block_boundaries(fixture_of):
    fx = fixture_of("textured_plane")
    block = fx.metadata["checker_block"]
    fired = 0
    for pose, image in zip(fx.poses, fx.images):
        mask = detect_edges(image).mask
        ys, xs = np.nonzero(mask)
        fired += len(xs)
        o, d = pixel_rays(pose, np.stack([xs, ys], 1) + 0.5)
        t = plane_ray_depth(o, d, (0, 0, 1), 0.0)
        hits = o + t[:, None] * d
        # ground footprint of one pixel along the ray, stretched by the viewing obliquity
        footprint = t / pose.focal[0] / np.abs(d[:, 2])
        gap = np.abs(hits[:, :2] / block - np.round(hits[:, :2] / block)).min(axis=1) * block
        assert np.mean(gap <= 1.5 * footprint) >= 0.95
    assert fired > 0


def test_write_fixture(tmp_path):
    fx = build_fixture(FixtureSpec("two_orbits", {"cameras": 6, "resolution": 16}))
    write_fixture(fx, tmp_path)
    poses = load_poses(tmp_path / "transforms.json")
    assert [p.id for p in poses] == [f"images/{p.id}.png" for p in fx.poses]
    for pose in poses:
        assert read_image(tmp_path / pose.id).width == 16
    truth = json.loads((tmp_path / "areas_truth.json").read_text())
    assert [a["center"] for a in truth] == [[-20.0, 0.0, 0.0], [20.0, 0.0, 0.0]]
    assert json.loads((tmp_path / "field.json").read_text())
    assert json.loads((tmp_path / "metadata.json").read_text())["kind"] == "two_orbits"


def test_bad_specs():
    with pytest.raises(ConfigError):
        build_fixture(FixtureSpec("moon"))
    with pytest.raises(ConfigError):
        build_fixture(FixtureSpec("two_orbits", {"wings": 2}))
    with pytest.raises(ConfigError):
        build_fixture(FixtureSpec("two_orbits", {"resolution": 8}))
    with pytest.raises(ConfigError):
        build_fixture(FixtureSpec("two_orbits", {"radius": -1.0}))
