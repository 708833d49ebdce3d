"""Ray sampling, compositing weights, depth and color rendering.

Depth uses the cumulative-weight rule: the distance to the first sample at
which the running weight sum exceeds one half. Colors come either from the
usual weighted sum over the whole ray or from the depth-window variant
("csd"), which keeps only samples within a relative window around the
rendered depth and rescales their weights to the full ray's mass.

All functions accept a leading batch of rays; the last axis indexes samples.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from nerfpc.errors import BadRange, ConfigError

ACCEPTED, REJECTED_INFINITE_DEPTH, REJECTED_EMPTY_WINDOW = 0, 1, 2


class Status(enum.IntEnum):
    accepted = ACCEPTED
    rejected_infinite_depth = REJECTED_INFINITE_DEPTH
    rejected_empty_window = REJECTED_EMPTY_WINDOW


@dataclass
class RaySamples:
    origins: np.ndarray  # (R, 3)
    directions: np.ndarray  # (R, 3)
    t: np.ndarray  # (R, n) distances along the unit direction
    deltas: np.ndarray  # (R, n)
    densities: np.ndarray | None = None
    colors: np.ndarray | None = None

    @property
    def positions(self) -> np.ndarray:
        return self.origins[:, None, :] + self.t[..., None] * self.directions[:, None, :]


@dataclass
class RayRender:
    weights: np.ndarray
    depth: float
    color: np.ndarray
    status: Status


@dataclass(frozen=True)
class RenderConfig:
    near: float = 0.1
    far: float = 100.0
    samples: int = 256
    resample: int = 0
    color_mode: str = "standard"
    eps4: float = 0.0025
    jitter: bool = False
    chunk: int = 1 << 20

    def __post_init__(self):
        if not 0 < self.near < self.far:
            raise BadRange(f"need 0 < near < far, got {self.near}, {self.far}")
        if self.samples < 1 or self.resample < 0:
            raise ConfigError("samples >= 1 and resample >= 0 required")
        if self.color_mode not in ("standard", "csd"):
            raise ConfigError(f"unknown color mode {self.color_mode!r}")
        if not self.eps4 > 0:
            raise ConfigError("eps4 must be positive")

    def spacing(self) -> float:
        return (self.far - self.near) / self.samples


def stratified_t(near: float, far: float, n: int, num_rays: int = 1, rng=None) -> np.ndarray:
    if not 0 < near < far:
        raise BadRange(f"need 0 < near < far, got {near}, {far}")
    if n < 1:
        raise BadRange("need at least one sample")
    width = (far - near) / n
    lower = near + width * np.arange(n)
    if rng is None:
        offs = np.full((num_rays, n), 0.5)
    else:
        offs = rng.random((num_rays, n))
    return lower[None, :] + width * offs


def deltas_from_t(t: np.ndarray, near: float, far: float) -> np.ndarray:
    """Interval lengths of the bins whose edges sit halfway between samples."""
    mids = 0.5 * (t[..., 1:] + t[..., :-1])
    edges = np.concatenate(
        [np.full(t.shape[:-1] + (1,), near), mids, np.full(t.shape[:-1] + (1,), far)], axis=-1
    )
    return np.diff(edges, axis=-1)


def sample_rays(origins, directions, near: float, far: float, n: int, rng=None) -> RaySamples:
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    directions = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    t = stratified_t(near, far, n, len(origins), rng)
    deltas = np.full_like(t, (far - near) / n)
    return RaySamples(origins, directions, t, deltas)


def sample_ray(origin, direction, near: float, far: float, n: int, rng=None) -> RaySamples:
    return sample_rays(origin, direction, near, far, n, rng)


def compositing_weights(sigmas, deltas) -> np.ndarray:
    sigmas = np.asarray(sigmas, dtype=np.float64)
    tau = sigmas * np.asarray(deltas, dtype=np.float64)
    alpha = -np.expm1(-tau)
    # shifted running sum; subtracting tau from the inclusive sum loses the small terms
    before = np.zeros_like(tau)
    np.cumsum(tau[..., :-1], axis=-1, out=before[..., 1:])
    trans = np.exp(-before)
    return trans * alpha


def depth_index(weights) -> np.ndarray:
    """Index of the first sample whose cumulative weight exceeds 0.5, or -1."""
    over = np.cumsum(weights, axis=-1) > 0.5
    idx = np.argmax(over, axis=-1)
    return np.where(np.any(over, axis=-1), idx, -1)


def render_depth(weights, t) -> np.ndarray:
    """Rendered depth per ray; ``inf`` when the cumulative weight never exceeds 0.5."""
    weights = np.asarray(weights, dtype=np.float64)
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), weights.shape)
    idx = depth_index(weights)
    picked = np.take_along_axis(t, np.maximum(idx, 0)[..., None], axis=-1)[..., 0]
    return np.where(idx >= 0, picked, np.inf)


def render_color_standard(weights, colors) -> np.ndarray:
    weights = np.asarray(weights, dtype=np.float64)
    return np.clip(np.einsum("...n,...nc->...c", weights, np.asarray(colors, dtype=np.float64)), 0.0, 1.0)


def render_color_csd(weights, colors, sample_depths, depth, eps4: float = 0.0025):
    """Color from samples within ``[d(1-eps4), d(1+eps4)]``; returns (color, window_nonempty)."""
    weights = np.asarray(weights, dtype=np.float64)
    colors = np.asarray(colors, dtype=np.float64)
    sample_depths = np.broadcast_to(np.asarray(sample_depths, dtype=np.float64), weights.shape)
    depth = np.asarray(depth, dtype=np.float64)[..., None]
    window = (sample_depths >= depth * (1.0 - eps4)) & (sample_depths <= depth * (1.0 + eps4))
    total = weights.sum(axis=-1)
    w_in = np.where(window, weights, 0.0)
    mass_in = w_in.sum(axis=-1)
    ok = np.any(window, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(mass_in > 0, total / mass_in, 0.0)
    rescaled = w_in * scale[..., None]
    color = np.clip(np.einsum("...n,...nc->...c", rescaled, colors), 0.0, 1.0)
    return np.where(ok[..., None], color, 0.0), ok


def renormalized_weights(weights, sample_depths, depth, eps4: float = 0.0025) -> np.ndarray:
    weights = np.asarray(weights, dtype=np.float64)
    window = (sample_depths >= depth * (1.0 - eps4)) & (sample_depths <= depth * (1.0 + eps4))
    mass_in = np.where(window, weights, 0.0).sum()
    if mass_in == 0:
        return np.zeros(0)
    return weights[window] * (weights.sum() / mass_in)


def importance_t(t, weights, near: float, far: float, m: int, rng=None) -> np.ndarray:
    """Draw ``m`` extra distances per ray in proportion to the coarse weights."""
    edges = np.concatenate(
        [np.full(t.shape[:-1] + (1,), near), 0.5 * (t[..., 1:] + t[..., :-1]), np.full(t.shape[:-1] + (1,), far)],
        axis=-1,
    )
    pdf = weights + 1e-5
    pdf = pdf / pdf.sum(-1, keepdims=True)
    cdf = np.concatenate([np.zeros(t.shape[:-1] + (1,)), np.cumsum(pdf, -1)], -1)
    cdf[..., -1] = 1.0
    if rng is None:
        u = np.broadcast_to((np.arange(m) + 0.5) / m, t.shape[:-1] + (m,))
    else:
        u = rng.random(t.shape[:-1] + (m,))
    idx = np.clip(np.sum(u[..., None] >= cdf[..., None, :], axis=-1) - 1, 0, t.shape[-1] - 1)
    c0 = np.take_along_axis(cdf, idx, -1)
    c1 = np.take_along_axis(cdf, idx + 1, -1)
    e0 = np.take_along_axis(edges, idx, -1)
    e1 = np.take_along_axis(edges, idx + 1, -1)
    frac = np.where(c1 > c0, (u - c0) / np.where(c1 > c0, c1 - c0, 1.0), 0.5)
    return e0 + frac * (e1 - e0)


@dataclass
class BatchRender:
    depth: np.ndarray  # (R,)
    color: np.ndarray  # (R, 3)
    status: np.ndarray  # (R,) Status codes
    weights: np.ndarray | None = None
    t: np.ndarray | None = None


class CountingField:
    """Wraps a field and counts point queries and rendered rays."""

    def __init__(self, field):
        self.field = field
        self.point_queries = 0
        self.rays = 0

    def query(self, positions, directions):
        self.point_queries += len(positions)
        return self.field.query(positions, directions)


def _render_chunk(field, origins, dirs, config: RenderConfig, rng, keep: bool):
    r = len(origins)
    t = stratified_t(config.near, config.far, config.samples, r, rng if config.jitter else None)
    deltas = np.full_like(t, config.spacing())
    if config.resample:
        sig, _ = _query(field, origins, dirs, t)
        w = compositing_weights(sig, deltas)
        extra = importance_t(t, w, config.near, config.far, config.resample, rng if config.jitter else None)
        t = np.sort(np.concatenate([t, extra], -1), axis=-1)
        deltas = deltas_from_t(t, config.near, config.far)
    sig, rgb = _query(field, origins, dirs, t)
    w = compositing_weights(sig, deltas)
    depth = render_depth(w, t)
    status = np.where(np.isfinite(depth), ACCEPTED, REJECTED_INFINITE_DEPTH)
    if config.color_mode == "csd":
        finite = np.isfinite(depth)
        color = np.zeros((r, 3))
        if finite.any():
            c, ok = render_color_csd(w[finite], rgb[finite], t[finite], depth[finite], config.eps4)
            color[finite] = c
            st = status[finite]
            st[~ok] = REJECTED_EMPTY_WINDOW
            status[finite] = st
    else:
        color = render_color_standard(w, rgb)
    return BatchRender(depth, color, status, w if keep else None, t if keep else None)


def _query(field, origins, dirs, t):
    r, n = t.shape
    pos = origins[:, None, :] + t[..., None] * dirs[:, None, :]
    d = np.broadcast_to(dirs[:, None, :], pos.shape)
    sig, rgb = field.query(pos.reshape(-1, 3), d.reshape(-1, 3))
    return np.asarray(sig).reshape(r, n), np.asarray(rgb).reshape(r, n, 3)


def render_rays(field, origins, directions, config: RenderConfig, rng=None, keep_weights: bool = False) -> BatchRender:
    """Render a batch of rays against any object exposing ``query(positions, directions)``."""
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    directions = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    if isinstance(field, CountingField):
        field.rays += len(origins)
    per_chunk = max(1, config.chunk // (config.samples + config.resample))
    parts = [
        _render_chunk(field, origins[s : s + per_chunk], directions[s : s + per_chunk], config, rng, keep_weights)
        for s in range(0, len(origins), per_chunk)
    ]
    if not parts:
        return BatchRender(np.zeros(0), np.zeros((0, 3)), np.zeros(0, dtype=int))
    cat = lambda name: None if getattr(parts[0], name) is None else np.concatenate([getattr(p, name) for p in parts])  # noqa: E731
    return BatchRender(cat("depth"), cat("color"), cat("status"), cat("weights"), cat("t"))


def render_pixel(field, origin, direction, config: RenderConfig, rng=None) -> RayRender:
    out = render_rays(field, origin, direction, config, rng, keep_weights=True)
    return RayRender(out.weights[0], float(out.depth[0]), out.color[0], Status(int(out.status[0])))
