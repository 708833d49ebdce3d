"""Point-cloud extraction with the surrounding-depth check.

A candidate is a random image and a center pixel whose whole patch lies in
the image. Its center ray is rendered first; only candidates that survive the
cheap checks (finite depth, nonempty color window, inside the bounds) have
their remaining patch rays rendered for the depth check. The naive variant
renders every patch ray up front and must give the same cloud.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from nerfpc.assets_io import CameraPose, PointCloud, pixel_rays
from nerfpc.errors import ConfigError, EmptySet, Exhausted
from nerfpc.volume_render import (
    ACCEPTED,
    REJECTED_EMPTY_WINDOW,
    REJECTED_INFINITE_DEPTH,
    CountingField,
    RenderConfig,
    render_rays,
)

BATCH_SIZE = 4096


@dataclass(frozen=True)
class ExtractionConfig:
    target_points: int = 10_000
    patch_w: int = 3
    patch_h: int = 3
    eps3: float = 0.0025
    sdd: bool = True
    bounds: tuple | None = None
    seed: int = 0
    color_mode: str = "csd"
    max_attempts: int = 1_000_000
    render: RenderConfig = dc_field(default_factory=lambda: RenderConfig(samples=256))
    batch_size: int = BATCH_SIZE

    def __post_init__(self):
        if self.patch_w < 1 or self.patch_h < 1 or self.patch_w % 2 == 0 or self.patch_h % 2 == 0:
            raise ConfigError("patch dimensions must be odd and >= 1")
        if self.target_points < 0 or self.max_attempts < 0 or self.batch_size < 1:
            raise ConfigError("target_points, max_attempts must be >= 0 and batch_size >= 1")
        if not 0.0 < self.eps3 < 1.0:
            raise ConfigError("eps3 must lie in (0, 1)")
        if self.color_mode not in ("standard", "csd"):
            raise ConfigError(f"unknown color mode {self.color_mode!r}")
        if self.bounds is not None:
            lo, hi = (np.asarray(b, dtype=np.float64) for b in self.bounds)
            if lo.shape != (3,) or hi.shape != (3,) or np.any(hi <= lo):
                raise ConfigError("bounds must be (lo, hi) 3-vectors with lo < hi")

    def render_config(self) -> RenderConfig:
        r = self.render
        return RenderConfig(r.near, r.far, r.samples, r.resample, self.color_mode, r.eps4, False, r.chunk)


@dataclass
class ExtractionStats:
    attempted: int = 0
    accepted: int = 0
    rejected_by: dict = dc_field(
        default_factory=lambda: {"infinite_depth": 0, "empty_csd_window": 0, "out_of_bounds": 0, "sdd": 0}
    )
    point_queries: int = 0
    rays: int = 0

    def to_dict(self) -> dict:
        return {
            "attempted": self.attempted,
            "accepted": self.accepted,
            "rejected_by": dict(self.rejected_by),
            "point_queries": self.point_queries,
            "rays": self.rays,
        }


def sdd_accept(d_center: float, patch_depths, eps3: float = 0.0025) -> bool:
    """Accept unless the center is farther than ``(1 - eps3)`` times the nearest patch depth."""
    depths = np.asarray(patch_depths, dtype=np.float64)
    if depths.size == 0:
        return True
    return bool((1.0 - eps3) * d_center <= depths.min())


def _patch_offsets(w: int, h: int) -> np.ndarray:
    """Pixel offsets of the patch without the center, row by row."""
    ys, xs = np.mgrid[-(h // 2) : h // 2 + 1, -(w // 2) : w // 2 + 1]
    offs = np.stack([xs.ravel(), ys.ravel()], 1)
    return offs[np.any(offs != 0, axis=1)]


def _draw_candidates(rng: np.random.Generator, poses, count: int, pw: int, ph: int):
    which = rng.integers(0, len(poses), count)
    xs = np.empty(count, dtype=np.int64)
    ys = np.empty(count, dtype=np.int64)
    u = rng.random((count, 2))
    for i, pose in enumerate(poses):
        sel = which == i
        nx, ny = pose.width - 2 * (pw // 2), pose.height - 2 * (ph // 2)
        xs[sel] = pw // 2 + np.minimum((u[sel, 0] * nx).astype(np.int64), nx - 1)
        ys[sel] = ph // 2 + np.minimum((u[sel, 1] * ny).astype(np.int64), ny - 1)
    return which, np.stack([xs, ys], 1)


def _rays(poses, which, pixels):
    origins = np.empty((len(which), 3))
    dirs = np.empty((len(which), 3))
    for i in np.unique(which):
        sel = np.flatnonzero(which == i)
        o, d = pixel_rays(poses[i], pixels[sel] + 0.5)
        origins[sel], dirs[sel] = o, d
    return origins, dirs


def _patch_depths(counter, poses, which, pixels, offsets, rcfg: RenderConfig) -> np.ndarray:
    """Depths (K, P) of the non-center patch rays of ``K`` candidates."""
    k, p = len(which), len(offsets)
    if k == 0:
        return np.zeros((0, p))
    rep_which = np.repeat(which, p)
    rep_pix = (pixels[:, None, :] + offsets[None, :, :]).reshape(-1, 2)
    o, d = _rays(poses, rep_which, rep_pix)
    depth_only = RenderConfig(rcfg.near, rcfg.far, rcfg.samples, rcfg.resample, "standard", rcfg.eps4, False, rcfg.chunk)
    return render_rays(counter, o, d, depth_only).depth.reshape(k, p)


def _extract(field, poses, config: ExtractionConfig, naive: bool):
    poses = list(poses)
    if not poses:
        raise EmptySet("no poses")
    for pose in poses:
        if pose.width < config.patch_w or pose.height < config.patch_h:
            raise ConfigError(f"image of pose {pose.id!r} is smaller than the patch")
    rcfg = config.render_config()
    counter = CountingField(field)
    stats = ExtractionStats()
    rng = np.random.Generator(np.random.Philox(config.seed))
    offsets = _patch_offsets(config.patch_w, config.patch_h)
    lo, hi = (np.asarray(b, dtype=np.float64) for b in config.bounds) if config.bounds is not None else (None, None)
    positions, colors = [], []
    while stats.accepted < config.target_points and stats.attempted < config.max_attempts:
        count = min(config.batch_size, config.max_attempts - stats.attempted)
        which, pixels = _draw_candidates(rng, poses, count, config.patch_w, config.patch_h)
        o, d = _rays(poses, which, pixels)
        center = render_rays(counter, o, d, rcfg)
        pts = o + d * np.where(np.isfinite(center.depth), center.depth, 0.0)[:, None]
        status = np.full(count, -1)
        status[center.status == REJECTED_INFINITE_DEPTH] = 0
        status[center.status == REJECTED_EMPTY_WINDOW] = 1
        alive = center.status == ACCEPTED
        if lo is not None:
            outside = alive & ~np.all((pts >= lo) & (pts <= hi), axis=1)
            status[outside] = 2
            alive &= ~outside
        if config.sdd and len(offsets):
            if naive:
                every = _patch_depths(counter, poses, which, pixels, offsets, rcfg)
                neigh = every[alive]
            else:
                neigh = _patch_depths(counter, poses, which[alive], pixels[alive], offsets, rcfg)
            ok = (1.0 - config.eps3) * center.depth[alive] <= neigh.min(axis=1)
            idx = np.flatnonzero(alive)
            status[idx[~ok]] = 3
            alive[idx[~ok]] = False
        status[alive] = 4
        # consume candidates in draw order until the target is reached
        need = config.target_points - stats.accepted
        cum = np.cumsum(status == 4)
        stop = count if cum[-1] < need else int(np.searchsorted(cum, need) + 1)
        used = status[:stop]
        stats.attempted += stop
        for code, key in enumerate(("infinite_depth", "empty_csd_window", "out_of_bounds", "sdd")):
            stats.rejected_by[key] += int(np.sum(used == code))
        keep = np.flatnonzero(used == 4)
        stats.accepted += len(keep)
        positions.append(pts[keep])
        colors.append(center.color[keep])
    stats.point_queries, stats.rays = counter.point_queries, counter.rays
    cloud = PointCloud(
        np.concatenate(positions) if positions else np.zeros((0, 3)),
        np.clip(np.concatenate(colors), 0.0, 1.0) if colors else np.zeros((0, 3)),
    )
    if stats.accepted < config.target_points:
        raise Exhausted(
            f"max_attempts={config.max_attempts} reached with {stats.accepted}/{config.target_points} points",
            cloud=cloud,
            stats=stats,
        )
    return cloud, stats


def extract_point_cloud(field, poses, config: ExtractionConfig = ExtractionConfig()):
    """Two-step extraction: patch rays are rendered only for candidates that pass the center checks."""
    return _extract(field, poses, config, naive=False)


def extract_naive(field, poses, config: ExtractionConfig = ExtractionConfig()):
    """Reference extraction rendering every patch ray before filtering; same cloud, more queries."""
    return _extract(field, poses, config, naive=True)
