"""Training the toy field on posed images with an optional collinearity term.

Every step draws pixel triplets with the edge-aware sampler. All three
pixels of a triplet feed the photometric term; candidate triplets also feed
the collinearity term. The collinearity term needs a differentiable depth,
so training uses the weight-averaged sample distance rather than the
cumulative-weight rule used at extraction time.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
import torch

from nerfpc.assets_io import CameraPose, ImageBuffer, pixel_rays
from nerfpc.collinearity.edges import detect_edges
from nerfpc.collinearity.loss import DENOM_EPS, CollinearityParams
from nerfpc.collinearity.triplets import SegmentTable, TripletBatch, sample_triplets, triplet_stream
from nerfpc.errors import ConfigError
from nerfpc.field.toy import ToyHashField
from nerfpc.volume_render import importance_t, stratified_t


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 2000
    triplets: int = 128
    lr: float = 1e-2
    lambda_col: float = 0.01
    near: float = 0.1
    far: float = 10.0
    samples: int = 128
    resample: int = 0
    seed: int = 0
    collinearity: CollinearityParams = dc_field(default_factory=CollinearityParams)
    edge_sigma: float = 1.4
    edge_low: float = 0.1
    edge_high: float = 0.2

    def __post_init__(self):
        if self.iterations < 0 or self.triplets < 1 or self.samples < 2 or self.resample < 0:
            raise ConfigError("iterations >= 0, triplets >= 1, samples >= 2 and resample >= 0 required")
        if not 0 < self.near < self.far:
            raise ConfigError(f"need 0 < near < far, got {self.near}, {self.far}")
        if self.lr <= 0 or self.lambda_col < 0:
            raise ConfigError("lr must be positive and lambda_col non-negative")


@dataclass
class RayBatch:
    """``3N`` rays laid out as all q0 rays, then q1 rays, then q2 rays."""

    origins: np.ndarray
    directions: np.ndarray
    targets: np.ndarray
    t: np.ndarray
    candidate: np.ndarray

    @property
    def num_triplets(self) -> int:
        return len(self.candidate)


def _t(a) -> torch.Tensor:
    return torch.as_tensor(np.ascontiguousarray(a), dtype=torch.float64)


def render_batch(field: ToyHashField, origins, directions, t):
    """Differentiable color (R, 3), expected depth (R,) and weights (R, S) for fixed sample distances."""
    o, d, tt = _t(origins), _t(directions), _t(t)
    r, s = tt.shape
    pos = o[:, None, :] + tt[..., None] * d[:, None, :]
    dirs = d[:, None, :].expand(r, s, 3)
    sigma, rgb = field(pos.reshape(-1, 3), dirs.reshape(-1, 3))
    sigma, rgb = sigma.reshape(r, s), rgb.reshape(r, s, 3)
    mids = 0.5 * (tt[:, 1:] + tt[:, :-1])
    deltas = torch.diff(torch.cat([tt[:, :1] - (mids[:, :1] - tt[:, :1]), mids, tt[:, -1:] + (tt[:, -1:] - mids[:, -1:])], 1), dim=1)
    tau = sigma * deltas
    trans = torch.exp(-(torch.cumsum(tau, 1) - tau))
    w = trans * -torch.expm1(-tau)
    color = (w[..., None] * rgb).sum(1)
    depth = (w * tt).sum(1) / (w.sum(1) + 1e-10)
    return color, depth, w


def collinearity_terms(depths, directions, colors, n: int, params: CollinearityParams):
    """Per-triplet collinearity loss (N,) from stacked q0/q1/q2 depths; gates are constants."""
    d0, d1, d2 = depths[:n], depths[n : 2 * n], depths[2 * n :]
    u = _t(directions)
    u0, u1, u2 = u[:n], u[n : 2 * n], u[2 * n :]
    a = torch.linalg.norm(torch.cross(u0, u2, dim=1), dim=1)
    b = torch.linalg.norm(torch.cross(u0, u1, dim=1), dim=1)
    c = torch.linalg.norm(torch.cross(u1, u2, dim=1), dim=1)
    den = d0 * b + d2 * c
    ok = (den > DENOM_EPS).detach()
    d_hat = d0 * d2 * a / torch.where(ok, den, torch.ones_like(den))
    delta = d1 - d_hat
    dmin = torch.minimum(torch.minimum(d0, d1), d2)
    chi = ((delta.abs() <= params.eps2 * dmin) & ok).detach()
    cols = _t(colors)
    gap = ((cols[n : 2 * n] - cols[:n]) ** 2).sum(1) + ((cols[2 * n :] - cols[n : 2 * n]) ** 2).sum(1)
    omega = torch.exp(-gap / (2 * params.gamma**2))
    return chi.to(delta.dtype) * omega * torch.tanh(params.tau * delta.abs())


def batch_loss(field: ToyHashField, batch: RayBatch, config: TrainConfig):
    """``(total, photometric, collinearity)`` torch scalars for one ray batch."""
    color, depth, _ = render_batch(field, batch.origins, batch.directions, batch.t)
    photo = ((color - _t(batch.targets)) ** 2).mean()
    n = batch.num_triplets
    mask = _t(batch.candidate.astype(np.float64))
    if config.lambda_col > 0 and batch.candidate.any():
        terms = collinearity_terms(depth, batch.directions, batch.targets, n, config.collinearity)
        col = (terms * mask).sum() / max(int(batch.candidate.sum()), 1)
    else:
        col = torch.zeros((), dtype=torch.float64)
    return photo + config.lambda_col * col, photo, col


def field_gradients(field: ToyHashField, batch: RayBatch, config: TrainConfig) -> tuple[float, dict[str, np.ndarray]]:
    """Total loss and its exact gradient for every named parameter."""
    if batch.num_triplets == 0:
        raise ValueError("empty batch")
    field.zero_grad(set_to_none=False)
    total, _, _ = batch_loss(field, batch, config)
    total.backward()
    grads = {name: p.grad.detach().numpy().copy() for name, p in field.named_parameters()}
    return float(total.detach()), grads


class TripletSource:
    """Edge maps and segment tables for a fixed image set, drawing ray batches."""

    def __init__(self, poses, images, config: TrainConfig):
        if len(poses) != len(images) or not poses:
            raise ConfigError("images must align one-to-one with a nonempty pose list")
        self.poses: list[CameraPose] = list(poses)
        self.images = [im if isinstance(im, ImageBuffer) else ImageBuffer(im) for im in images]
        for pose, im in zip(self.poses, self.images):
            if (im.height, im.width) != (pose.height, pose.width):
                raise ConfigError(f"image size {im.width}x{im.height} does not match pose {pose.id!r}")
        self.config = config
        self.tables = [
            SegmentTable.build(
                detect_edges(im, config.edge_sigma, config.edge_low, config.edge_high), config.collinearity.max_segment
            )
            for im in self.images
        ]

    def triplets(self, rng: np.random.Generator, count: int) -> TripletBatch:
        which = rng.integers(0, len(self.poses), count)
        parts = [sample_triplets(self.tables[i], rng, int(k), i) for i, k in enumerate(np.bincount(which, minlength=len(self.poses))) if k]
        cat = lambda name: np.concatenate([getattr(p, name) for p in parts])  # noqa: E731
        return TripletBatch(cat("q0"), cat("q1"), cat("q2"), cat("image_index"), cat("candidate"))

    def rays(self, trip: TripletBatch):
        n = len(trip)
        origins = np.empty((3 * n, 3))
        dirs = np.empty((3 * n, 3))
        targets = np.empty((3 * n, 3))
        for slot, q in enumerate((trip.q0, trip.q1, trip.q2)):
            rows = slice(slot * n, (slot + 1) * n)
            for i in np.unique(trip.image_index):
                sel = np.flatnonzero(trip.image_index == i)
                o, d = pixel_rays(self.poses[i], q[sel] + 0.5)
                origins[rows][sel] = o
                dirs[rows][sel] = d
                targets[rows][sel] = self.images[i].rgb()[q[sel, 1], q[sel, 0]]
        return origins, dirs, targets

    def batch(self, field: ToyHashField, step: int) -> RayBatch:
        cfg = self.config
        rng = triplet_stream(cfg.seed, step)
        trip = self.triplets(rng, cfg.triplets)
        origins, dirs, targets = self.rays(trip)
        t = stratified_t(cfg.near, cfg.far, cfg.samples, len(origins), rng)
        if cfg.resample:
            with torch.no_grad():
                _, _, w = render_batch(field, origins, dirs, t)
            extra = importance_t(t, w.numpy(), cfg.near, cfg.far, cfg.resample, rng)
            t = np.sort(np.concatenate([t, extra], 1), axis=1)
        return RayBatch(origins, dirs, targets, t, trip.candidate)


@dataclass
class TrainHistory:
    total: list[float] = dc_field(default_factory=list)
    photometric: list[float] = dc_field(default_factory=list)
    collinearity: list[float] = dc_field(default_factory=list)


def train_toy(field: ToyHashField, poses, images, focus_areas=(), config: TrainConfig = TrainConfig()):
    """Adam on photometric squared error plus ``lambda_col`` times the collinearity loss.

    ``focus_areas`` must match the field's local branches; it is accepted to
    check that the field was built for the same areas.
    """
    if len(focus_areas) > field.config.max_areas:
        raise ConfigError(f"{len(focus_areas)} focus areas exceed max_areas={field.config.max_areas}")
    if focus_areas and len(focus_areas) != field.num_local:
        raise ConfigError(f"field has {field.num_local} local branches but {len(focus_areas)} focus areas were given")
    history = TrainHistory()
    if config.iterations == 0:
        return field, history
    source = TripletSource(poses, images, config)
    opt = torch.optim.Adam(field.parameters(), lr=config.lr, eps=1e-15)
    field.train()
    for step in range(config.iterations):
        batch = source.batch(field, step)
        opt.zero_grad(set_to_none=True)
        total, photo, col = batch_loss(field, batch, config)
        total.backward()
        opt.step()
        history.total.append(total.item())
        history.photometric.append(photo.item())
        history.collinearity.append(col.item())
    field.eval()
    return field, history


def photometric_rmse(field: ToyHashField, poses, images, near: float, far: float, samples: int = 128, stride: int = 1) -> float:
    """RMSE of midpoint-sampled renders against ``images`` over every ``stride``-th pixel."""
    errs = []
    with torch.no_grad():
        for pose, im in zip(poses, images):
            im = im if isinstance(im, ImageBuffer) else ImageBuffer(im)
            ys, xs = np.mgrid[0 : pose.height : stride, 0 : pose.width : stride]
            pix = np.stack([xs.ravel(), ys.ravel()], 1)
            o, d = pixel_rays(pose, pix + 0.5)
            t = stratified_t(near, far, samples, len(o))
            color, _, _ = render_batch(field, o, d, t)
            errs.append(((color.numpy() - im.rgb()[pix[:, 1], pix[:, 0]]) ** 2).ravel())
    return float(np.sqrt(np.mean(np.concatenate(errs))))
