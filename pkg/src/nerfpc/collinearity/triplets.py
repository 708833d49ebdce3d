"""Edge-aware pixel triplet sampling.

A triplet is ``(q1 - v, q1, q1 + v)`` with integer ``v``, so the middle pixel
is exactly the midpoint. ``v`` is the longest offset, among 16 directions
over ``[0, pi)``, whose rasterized segment stays inside the image and avoids
every edge pixel. Per edge map, the best offset of every pixel is computed
once (:class:`SegmentTable`) so batches are drawn without per-triplet search.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from nerfpc.collinearity.edges import EdgeMap

NUM_DIRECTIONS = 16


@dataclass(frozen=True)
class PixelTriplet:
    q0: tuple[int, int]
    q1: tuple[int, int]
    q2: tuple[int, int]
    image_id: str
    is_collinear_candidate: bool


@dataclass
class TripletBatch:
    """Arrays of ``N`` triplets; pixel coordinates are integer ``(x, y)``."""

    q0: np.ndarray
    q1: np.ndarray
    q2: np.ndarray
    image_index: np.ndarray
    candidate: np.ndarray

    def __len__(self) -> int:
        return len(self.q1)

    def triplet(self, k: int, image_ids=None) -> PixelTriplet:
        idx = int(self.image_index[k])
        name = image_ids[idx] if image_ids is not None else str(idx)
        as_t = lambda a: (int(a[k, 0]), int(a[k, 1]))  # noqa: E731
        return PixelTriplet(as_t(self.q0), as_t(self.q1), as_t(self.q2), name, bool(self.candidate[k]))


def bresenham(x0: int, y0: int, x1: int, y1: int) -> np.ndarray:
    """Integer pixels on the segment from ``(x0, y0)`` to ``(x1, y1)``, both ends included."""
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    out = []
    x, y = x0, y0
    while True:
        out.append((x, y))
        if x == x1 and y == y1:
            break
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x += sx
        if e2 <= dx:
            err += dx
            y += sy
    return np.array(out, dtype=np.int64)


def direction_offsets(max_segment: int = 40, num_directions: int = NUM_DIRECTIONS) -> list[list[tuple[int, int]]]:
    """Distinct integer half-offsets per direction, in growing order, with ``|2v| <= max_segment``."""
    out = []
    for k in range(num_directions):
        theta = math.pi * k / num_directions
        c, s = math.cos(theta), math.sin(theta)
        steps, h = [], 1
        while True:
            v = (int(round(h * c)), int(round(h * s)))
            if 2 * math.hypot(*v) > max_segment:
                break
            if v != (0, 0) and (not steps or steps[-1] != v):
                steps.append(v)
            h += 1
        out.append(steps)
    return out


def _shift_ok(free: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """``free[y + dy, x + dx]`` for every pixel, False outside the image."""
    h, w = free.shape
    out = np.zeros_like(free)
    ys = slice(max(0, -dy), min(h, h - dy))
    xs = slice(max(0, -dx), min(w, w - dx))
    out[ys, xs] = free[ys.start + dy : ys.stop + dy, xs.start + dx : xs.stop + dx]
    return out


@dataclass
class SegmentTable:
    """Best half-offset ``v`` (H, W, 2) per pixel; ``candidate`` marks pixels with any valid segment."""

    offsets: np.ndarray
    candidate: np.ndarray
    edge: np.ndarray

    @classmethod
    def build(cls, edge_map: EdgeMap, max_segment: int = 40) -> "SegmentTable":
        edge = np.asarray(edge_map.mask, dtype=bool)
        free = ~edge
        h, w = edge.shape
        best_len = np.zeros((h, w))
        best = np.zeros((h, w, 2), dtype=np.int64)
        for steps in direction_offsets(max_segment):
            alive = free.copy()
            for vx, vy in steps:
                ok = alive.copy()
                for px, py in bresenham(-vx, -vy, vx, vy):
                    ok &= _shift_ok(free, int(px), int(py))
                alive = ok
                if not alive.any():
                    break
                length = math.hypot(vx, vy)
                # strictly longer only: earlier directions win ties
                better = alive & (length > best_len)
                best_len[better] = length
                best[better] = (vx, vy)
        return cls(best, best_len > 0, edge)

    @property
    def shape(self) -> tuple[int, int]:
        return self.edge.shape


def sample_triplets(table: SegmentTable, rng: np.random.Generator, count: int, image_index: int = 0) -> TripletBatch:
    h, w = table.shape
    q1 = np.stack([rng.integers(0, w, count), rng.integers(0, h, count)], axis=1)
    r0 = np.stack([rng.integers(0, w, count), rng.integers(0, h, count)], axis=1)
    r2 = np.stack([rng.integers(0, w, count), rng.integers(0, h, count)], axis=1)
    cand = table.candidate[q1[:, 1], q1[:, 0]]
    v = table.offsets[q1[:, 1], q1[:, 0]]
    q0 = np.where(cand[:, None], q1 - v, r0)
    q2 = np.where(cand[:, None], q1 + v, r2)
    return TripletBatch(q0, q1, q2, np.full(count, image_index, dtype=np.int64), cand)


def sample_triplet(edge_map: EdgeMap, rng: np.random.Generator, max_segment: int = 40, image_id: str = "0") -> PixelTriplet:
    if edge_map.height < 3 or edge_map.width < 3:
        raise ValueError("image must be at least 3x3")
    batch = sample_triplets(SegmentTable.build(edge_map, max_segment), rng, 1)
    return batch.triplet(0, [image_id])


def triplet_stream(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator; distinct ``stream`` values give independent, reproducible batches."""
    return np.random.Generator(np.random.Philox(key=[seed & 0xFFFFFFFFFFFFFFFF, stream]))
