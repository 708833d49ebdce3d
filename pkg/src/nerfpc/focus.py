"""Focus-area localization from camera poses.

Each camera's optical axis is marched outwards; the depth at which the axis
point is closest to its neighbours' axis points marks a ray concentration
("caustic") point. Caustic points, lifted to 4D with their depth, are
clustered under a frustum-aware semimetric and every cluster becomes an
axis-aligned focus cube.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from nerfpc.assets_io import CameraPose
from nerfpc.errors import ConfigError, TooFewCameras
from nerfpc.hdbscan import hdbscan_labels

BRUTE_FORCE_LIMIT = 2000
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class TSearch:
    t_min: float
    t_max: float
    steps: int = 256

    def __post_init__(self):
        if not (self.t_min >= 0 and self.t_max > self.t_min and self.steps >= 2):
            raise ConfigError(f"invalid depth search range {self}")

    def grid(self) -> np.ndarray:
        lo = self.t_min if self.t_min > 0 else self.t_max * 1e-6
        g = np.geomspace(lo, self.t_max, self.steps)
        g[0] = self.t_min
        return g


@dataclass(frozen=True)
class LrfConfig:
    max_areas: int = 5
    neighbors: int = 20
    alpha_deg: float = 10.0
    min_cluster_size: int = 20
    single_cluster: bool = True
    t_search: TSearch | None = None
    scene_box_scale: float = 2.0

    def __post_init__(self):
        if self.max_areas < 0 or self.neighbors < 1 or self.min_cluster_size < 2:
            raise ConfigError("max_areas >= 0, neighbors >= 1 and min_cluster_size >= 2 required")
        if not 0.0 < self.alpha_deg < 90.0:
            raise ConfigError("alpha_deg must lie in (0, 90)")


@dataclass(frozen=True)
class CausticPoint:
    position: np.ndarray
    depth: float
    camera_id: str
    spread: float = 0.0  # neighbour-distance sum at the chosen depth

    def as_4d(self) -> np.ndarray:
        return np.append(self.position, self.depth)


@dataclass(frozen=True)
class FocusArea:
    center: np.ndarray
    radius: float
    member_camera_ids: tuple[str, ...] = ()
    low_confidence: bool = False

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64).reshape(3))
        if not self.radius > 0:
            raise ValueError("focus area radius must be positive")

    @property
    def cube(self) -> tuple[np.ndarray, np.ndarray]:
        return self.center - self.radius, self.center + self.radius


def scene_scale(poses: Sequence[CameraPose]) -> float:
    """Diagonal of the bounding box of camera origins."""
    origins = np.array([p.origin for p in poses])
    return float(np.linalg.norm(origins.max(0) - origins.min(0)))


def default_t_search(poses: Sequence[CameraPose], steps: int = 256) -> TSearch:
    s = scene_scale(poses)
    if s <= 0:
        s = 1.0
    return TSearch(0.1 * s, 4.0 * s, steps)


def scene_box(poses: Sequence[CameraPose], scale: float = 2.0) -> tuple[np.ndarray, np.ndarray]:
    """Cube around the camera origins, ``scale`` times their largest half-extent."""
    origins = np.array([p.origin for p in poses])
    lo, hi = origins.min(0), origins.max(0)
    center = (lo + hi) / 2
    half = scale * float(np.max(hi - lo)) / 2
    if half <= 0:
        half = scale
    return center - half, center + half


def _ray_arrays(poses):
    origins = np.array([p.origin for p in poses])
    dirs = np.array([p.viewing_direction for p in poses])
    return origins, dirs


def _objective(k: int, t, origins, dirs, n: int) -> np.ndarray:
    """Sum of distances from x_k(t) to its n nearest neighbours in P(t), for each t."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    d0 = np.delete(origins[k] - origins, k, axis=0)
    dd = np.delete(dirs[k] - dirs, k, axis=0)
    gaps = d0[None, :, :] + t[:, None, None] * dd[None, :, :]
    dist = np.sqrt(np.einsum("tjc,tjc->tj", gaps, gaps))
    if n < dist.shape[1]:
        dist = np.partition(dist, n - 1, axis=1)[:, :n]
    return dist.sum(axis=1)


def _grid_objectives_kdtree(grid, origins, dirs, n: int) -> np.ndarray:
    out = np.empty((len(grid), len(origins)))
    for i, t in enumerate(grid):
        pts = origins + t * dirs
        d, _ = cKDTree(pts).query(pts, k=n + 1)
        # column 0 is the point itself at distance zero
        out[i] = d[:, 1:].sum(axis=1)
    return out


def _golden_refine(f, a: float, b: float, iters: int = 80) -> float:
    c, d = b - _GOLDEN * (b - a), a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    return c if fc <= fd else d


def _refine(k, grid, values, origins, dirs, n) -> tuple[float, float]:
    best = int(np.argmin(values))  # first minimum = smallest t
    t_best, f_best = float(grid[best]), float(values[best])
    lo, hi = grid[max(best - 1, 0)], grid[min(best + 1, len(grid) - 1)]
    f = lambda t: float(_objective(k, t, origins, dirs, n)[0])  # noqa: E731
    t_ref = _golden_refine(f, float(lo), float(hi))
    f_ref = f(t_ref)
    if f_ref < f_best:
        return t_ref, f_ref
    return t_best, f_best


def optimal_ray_depth(
    camera_index: int,
    poses: Sequence[CameraPose],
    n: int = 20,
    t_search: TSearch | None = None,
) -> float:
    """Depth along a camera's optical axis where neighbouring axes concentrate most."""
    if len(poses) < n + 1:
        raise TooFewCameras(f"need at least {n + 1} cameras, got {len(poses)}")
    t_search = t_search or default_t_search(poses)
    origins, dirs = _ray_arrays(poses)
    grid = t_search.grid()
    values = _objective(camera_index, grid, origins, dirs, n)
    return _refine(camera_index, grid, values, origins, dirs, n)[0]


def build_caustic_points(poses: Sequence[CameraPose], config: LrfConfig = LrfConfig()) -> list[CausticPoint]:
    n = config.neighbors
    if len(poses) < n + 1:
        raise TooFewCameras(f"need at least {n + 1} cameras, got {len(poses)}")
    t_search = config.t_search or default_t_search(poses)
    origins, dirs = _ray_arrays(poses)
    grid = t_search.grid()
    table = _grid_objectives_kdtree(grid, origins, dirs, n) if len(poses) > BRUTE_FORCE_LIMIT else None
    points = []
    for k, pose in enumerate(poses):
        values = table[:, k] if table is not None else _objective(k, grid, origins, dirs, n)
        t, spread = _refine(k, grid, values, origins, dirs, n)
        points.append(CausticPoint(origins[k] + t * dirs[k], t, pose.id, spread))
    return points


def frustum_semimetric(a: CausticPoint, b: CausticPoint, alpha_deg: float = 10.0) -> float:
    gap = float(np.linalg.norm(a.as_4d() - b.as_4d()))
    return max(gap - (a.depth + b.depth) * math.sin(math.radians(alpha_deg)), 0.0)


def pairwise_semimetric(points: Sequence[CausticPoint], alpha_deg: float = 10.0) -> np.ndarray:
    x = np.array([p.as_4d() for p in points])
    t = x[:, 3]
    diff = x[:, None, :] - x[None, :, :]
    gap = np.sqrt(np.einsum("ijc,ijc->ij", diff, diff))
    out = np.maximum(gap - (t[:, None] + t[None, :]) * math.sin(math.radians(alpha_deg)), 0.0)
    np.fill_diagonal(out, 0.0)
    return out


def hdbscan_cluster(
    points: Sequence[CausticPoint],
    alpha_deg: float = 10.0,
    min_cluster_size: int = 20,
    single_cluster: bool = True,
    metric=None,
) -> np.ndarray:
    """Cluster labels under the frustum semimetric (or any given pairwise ``metric``)."""
    if not points:
        raise ValueError("no points to cluster")
    if metric is None:
        dist = pairwise_semimetric(points, alpha_deg)
    else:
        dist = np.array([[metric(a, b) for b in points] for a in points])
    return hdbscan_labels(dist, min_cluster_size, single_cluster)


def focus_areas_from_clusters(
    labels,
    points: Sequence[CausticPoint],
    poses: Sequence[CameraPose],
    max_areas: int = 5,
    alpha_deg: float = 10.0,
    neighbors: int | None = None,
) -> list[FocusArea]:
    """Turn cluster labels into focus cubes, largest clusters first, at most ``max_areas``."""
    labels = np.asarray(labels)
    by_id = {p.id: p for p in poses}
    groups = []
    for label in sorted(set(labels.tolist()) - {-1}):
        members = [points[i] for i in np.flatnonzero(labels == label)]
        ids = tuple(sorted(m.camera_id for m in members))
        groups.append((members, ids))
    groups.sort(key=lambda g: (-len(g[0]), g[1]))
    sin_a = math.sin(math.radians(alpha_deg))
    areas = []
    for members, ids in groups[:max_areas]:
        center = np.mean([m.position for m in members], axis=0)
        origins = np.array([by_id[m.camera_id].origin for m in members])
        radius = float(np.mean(np.abs(origins - center).max(axis=1)))
        low = False
        if neighbors:
            # neighbouring axis points farther apart than the frustum width: no real concentration
            ratios = [m.spread / neighbors / max(m.depth, 1e-12) for m in members]
            low = bool(np.mean(ratios) > sin_a)
        areas.append(FocusArea(center, radius, ids, low))
    return areas


def detect_focus_areas(poses: Sequence[CameraPose], config: LrfConfig = LrfConfig()) -> list[FocusArea]:
    points = build_caustic_points(poses, config)
    labels = hdbscan_cluster(points, config.alpha_deg, config.min_cluster_size, config.single_cluster)
    return focus_areas_from_clusters(
        labels, points, poses, config.max_areas, config.alpha_deg, config.neighbors
    )
