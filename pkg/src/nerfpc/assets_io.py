"""Camera poses, images, point clouds and focus-area files.

Camera convention: ``rotation`` maps camera-frame vectors to world frame and
the optical axis is ``-Z`` in the camera frame (x right, y up). Image pixel
coordinates are continuous with x to the right and y downwards; the center of
integer pixel ``(i, j)`` sits at ``(i + 0.5, j + 0.5)``.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from nerfpc.errors import EmptySet, InvalidPose, IoError, OutOfBounds, ParseError

OPTICAL_AXIS = np.array([0.0, 0.0, -1.0])
_ORTHO_TOL = 1e-3


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CameraPose:
    """Pinhole camera with a world-from-camera rotation."""

    origin: np.ndarray
    rotation: np.ndarray
    focal: tuple[float, float]
    principal_point: tuple[float, float]
    width: int
    height: int
    id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "origin", _frozen(self.origin).reshape(3))
        object.__setattr__(self, "rotation", _frozen(self.rotation).reshape(3, 3))
        object.__setattr__(self, "focal", (float(self.focal[0]), float(self.focal[1])))
        object.__setattr__(
            self, "principal_point", (float(self.principal_point[0]), float(self.principal_point[1]))
        )
        if min(self.focal) <= 0 or self.width <= 0 or self.height <= 0:
            raise InvalidPose(f"pose {self.id!r}: focal and image size must be positive")
        err = np.abs(self.rotation @ self.rotation.T - np.eye(3)).max()
        if err > 1e-6:
            raise InvalidPose(f"pose {self.id!r}: rotation not orthonormal (err {err:.2e})")

    @property
    def viewing_direction(self) -> np.ndarray:
        d = self.rotation @ OPTICAL_AXIS
        return d / np.linalg.norm(d)

    @property
    def intrinsics(self) -> np.ndarray:
        fx, fy = self.focal
        cx, cy = self.principal_point
        return np.array([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])

    def camera_to_world(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.origin
        return m


@dataclass(frozen=True)
class ImageBuffer:
    """Row-major image with values in [0, 1], stored as (height, width, channels)."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or data.shape[2] not in (1, 3):
            raise ValueError(f"image must have 1 or 3 channels, got shape {data.shape}")
        if data.size and (data.min() < 0.0 or data.max() > 1.0):
            raise ValueError("image values must lie in [0, 1]")
        data = data.copy()
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def rgb(self) -> np.ndarray:
        if self.channels == 3:
            return self.data
        return np.repeat(self.data, 3, axis=2)

    def gray(self) -> np.ndarray:
        if self.channels == 1:
            return self.data[:, :, 0]
        return self.data @ np.array([0.299, 0.587, 0.114])


@dataclass
class PointCloud:
    """Colored metric points. ``positions`` (N, 3) meters, ``colors`` (N, 3) in [0, 1]."""

    positions: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    colors: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.colors = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
        if len(self.positions) != len(self.colors):
            raise ValueError("positions and colors differ in length")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("point positions must be finite")
        if self.colors.size and (self.colors.min() < 0.0 or self.colors.max() > 1.0):
            raise ValueError("colors must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.positions)


# --------------------------------------------------------------------------
# poses


def orthonormalize(rotation, pose_id: str = "") -> np.ndarray:
    """Snap a nearly orthonormal matrix to the closest rotation."""
    r = np.asarray(rotation, dtype=np.float64)
    if r.shape != (3, 3) or not np.all(np.isfinite(r)):
        raise InvalidPose(f"pose {pose_id!r}: rotation must be a finite 3x3 matrix")
    if abs(np.linalg.det(r)) < 1e-12:
        raise InvalidPose(f"pose {pose_id!r}: rotation is not invertible")
    err = np.abs(r @ r.T - np.eye(3)).max()
    if err > _ORTHO_TOL:
        raise InvalidPose(f"pose {pose_id!r}: rotation too far from orthonormal (err {err:.2e})")
    u, _, vt = np.linalg.svd(r)
    out = u @ vt
    if np.linalg.det(out) < 0:
        raise InvalidPose(f"pose {pose_id!r}: rotation is a reflection")
    return out


def look_at(origin, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """World-from-camera rotation whose optical axis (-Z) points at ``target``."""
    origin = np.asarray(origin, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - origin
    forward /= np.linalg.norm(forward)
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(forward, up)
    if np.linalg.norm(right) < 1e-9:
        # looking along ``up``; any perpendicular works
        right = np.cross(forward, [1.0, 0.0, 0.0] if abs(forward[0]) < 0.9 else [0.0, 1.0, 0.0])
    right /= np.linalg.norm(right)
    cam_up = np.cross(right, forward)
    return np.stack([right, cam_up, -forward], axis=1)


def _load_transforms_json(path: Path) -> list[CameraPose]:
    try:
        meta = json.loads(path.read_text())
        frames = meta["frames"]
        fx, fy = float(meta["fl_x"]), float(meta["fl_y"])
        cx, cy = float(meta["cx"]), float(meta["cy"])
        w, h = int(meta["w"]), int(meta["h"])
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    poses = []
    for k, frame in enumerate(frames):
        try:
            m = np.array(frame["transform_matrix"], dtype=np.float64)
            pose_id = str(frame.get("file_path", f"frame_{k:05d}"))
        except (KeyError, ValueError, TypeError) as exc:
            raise ParseError(f"{path}: frame {k}: {exc}") from exc
        if m.shape != (4, 4):
            raise ParseError(f"{path}: frame {k}: transform_matrix must be 4x4")
        poses.append(
            CameraPose(m[:3, 3], orthonormalize(m[:3, :3], pose_id), (fx, fy), (cx, cy), w, h, pose_id)
        )
    return poses


def _load_pose_csv(path: Path) -> list[CameraPose]:
    poses = []
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    for lineno, row in enumerate(rows):
        if len(row) != 19:
            raise ParseError(f"{path}: row {lineno}: expected 19 fields, got {len(row)}")
        try:
            vals = [float(v) for v in row[1:]]
        except ValueError as exc:
            raise ParseError(f"{path}: row {lineno}: {exc}") from exc
        pose_id = row[0].strip()
        rot = orthonormalize(np.array(vals[3:12]).reshape(3, 3), pose_id)
        fx, fy, cx, cy, w, h = vals[12:]
        if w != int(w) or h != int(h):
            raise ParseError(f"{path}: row {lineno}: width/height must be integers")
        poses.append(CameraPose(vals[0:3], rot, (fx, fy), (cx, cy), int(w), int(h), pose_id))
    return poses


def load_poses(path, format: str | None = None) -> list[CameraPose]:
    """Read camera poses from ``transforms_json`` or ``pose_csv`` files.

    ``format`` defaults to a guess from the file extension.
    """
    path = Path(path)
    if not path.exists():
        raise ParseError(f"{path}: no such file")
    if format is None:
        format = "pose_csv" if path.suffix.lower() == ".csv" else "transforms_json"
    if format == "transforms_json":
        poses = _load_transforms_json(path)
    elif format == "pose_csv":
        poses = _load_pose_csv(path)
    else:
        raise ValueError(f"unknown pose format {format!r}")
    if not poses:
        raise EmptySet(f"{path}: no poses")
    return poses


def save_transforms_json(poses: Sequence[CameraPose], path) -> None:
    """Write poses sharing one set of intrinsics as ``transforms_json``."""
    if not poses:
        raise EmptySet("no poses to write")
    p0 = poses[0]
    meta = {
        "fl_x": p0.focal[0],
        "fl_y": p0.focal[1],
        "cx": p0.principal_point[0],
        "cy": p0.principal_point[1],
        "w": p0.width,
        "h": p0.height,
        "frames": [
            {"file_path": p.id, "transform_matrix": p.camera_to_world().tolist()} for p in poses
        ],
    }
    _write_text(path, json.dumps(meta, indent=2) + "\n")


def save_pose_csv(poses: Sequence[CameraPose], path) -> None:
    lines = []
    for p in poses:
        vals = [*p.origin, *p.rotation.ravel(), *p.focal, *p.principal_point]
        lines.append(",".join([p.id, *(repr(float(v)) for v in vals), str(p.width), str(p.height)]))
    _write_text(path, "\n".join(lines) + "\n")


# --------------------------------------------------------------------------
# rays


def pixel_rays(pose: CameraPose, pixels) -> tuple[np.ndarray, np.ndarray]:
    """Back-project pixels (N, 2) into world rays; returns origins and unit directions."""
    px = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    inside = (px[:, 0] >= 0) & (px[:, 0] <= pose.width) & (px[:, 1] >= 0) & (px[:, 1] <= pose.height)
    if not np.all(inside):
        raise OutOfBounds(f"pixel outside {pose.width}x{pose.height} image of pose {pose.id!r}")
    fx, fy = pose.focal
    cx, cy = pose.principal_point
    cam = np.stack([(px[:, 0] - cx) / fx, -(px[:, 1] - cy) / fy, -np.ones(len(px))], axis=1)
    dirs = cam @ pose.rotation.T
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return np.broadcast_to(pose.origin, dirs.shape).copy(), dirs


def pixel_ray(pose: CameraPose, pixel) -> tuple[np.ndarray, np.ndarray]:
    o, d = pixel_rays(pose, np.asarray(pixel, dtype=np.float64).reshape(1, 2))
    return o[0], d[0]


def pixel_centers(ix, iy) -> np.ndarray:
    return np.stack([np.asarray(ix) + 0.5, np.asarray(iy) + 0.5], axis=-1).astype(np.float64)


# --------------------------------------------------------------------------
# images


def _write_bytes(path, payload: bytes) -> None:
    try:
        Path(path).write_bytes(payload)
    except OSError as exc:
        raise IoError(f"{path}: {exc}") from exc


def _write_text(path, text: str) -> None:
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise IoError(f"{path}: {exc}") from exc


def _pgm_tokens(raw: bytes, count: int) -> tuple[list[bytes], int]:
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ParseError("truncated PGM header")
        tokens.append(raw[start:pos])
    return tokens, pos + 1  # exactly one whitespace byte ends the header


def read_pgm(path) -> np.ndarray:
    """Binary P5 PGM as a uint8/uint16 array (height, width)."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"{path}: {exc}") from exc
    tokens, offset = _pgm_tokens(raw, 4)
    if tokens[0] != b"P5":
        raise ParseError(f"{path}: not a binary PGM")
    w, h, maxval = (int(t) for t in tokens[1:])
    dtype = np.dtype(np.uint8) if maxval < 256 else np.dtype(">u2")
    body = np.frombuffer(raw, dtype=dtype, count=w * h, offset=offset)
    return body.reshape(h, w).astype(np.uint16 if maxval >= 256 else np.uint8)


def write_pgm(path, values: np.ndarray) -> None:
    values = np.asarray(values, dtype=np.uint8)
    h, w = values.shape
    _write_bytes(path, f"P5\n{w} {h}\n255\n".encode() + values.tobytes())


def read_image(path) -> ImageBuffer:
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        return ImageBuffer(read_pgm(path).astype(np.float64) / 255.0)
    try:
        with Image.open(path) as im:
            if im.mode not in ("L", "RGB"):
                im = im.convert("RGB")
            arr = np.asarray(im)
    except OSError as exc:
        raise IoError(f"{path}: {exc}") from exc
    return ImageBuffer(arr.astype(np.float64) / 255.0)


def quantize(values) -> np.ndarray:
    return np.clip(np.round(np.asarray(values) * 255.0), 0, 255).astype(np.uint8)


def write_image(path, image: ImageBuffer) -> None:
    path = Path(path)
    q = quantize(image.data)
    if path.suffix.lower() == ".pgm":
        write_pgm(path, q[:, :, 0] if image.channels == 1 else quantize(image.gray()))
        return
    arr = q[:, :, 0] if image.channels == 1 else q
    try:
        Image.fromarray(arr).save(path, format="PNG")
    except OSError as exc:
        raise IoError(f"{path}: {exc}") from exc


# --------------------------------------------------------------------------
# PLY

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}  # fmt: skip

_VERTEX_DTYPE = np.dtype(
    [("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("red", "u1"), ("green", "u1"), ("blue", "u1")]
)


def write_ply(cloud: PointCloud, path) -> None:
    """Binary little-endian PLY with float xyz and uchar rgb."""
    verts = np.empty(len(cloud), dtype=_VERTEX_DTYPE)
    pos = cloud.positions.astype(np.float32)
    verts["x"], verts["y"], verts["z"] = pos[:, 0], pos[:, 1], pos[:, 2]
    col = quantize(cloud.colors)
    verts["red"], verts["green"], verts["blue"] = col[:, 0], col[:, 1], col[:, 2]
    header = (
        "ply\n"
        "format binary_little_endian 1.0\n"
        f"element vertex {len(cloud)}\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        "end_header\n"
    )
    _write_bytes(path, header.encode("ascii") + verts.tobytes())


def read_ply(path) -> PointCloud:
    """Read the vertex element of a binary little-endian PLY file."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"{path}: {exc}") from exc
    end = raw.find(b"end_header\n")
    if not raw.startswith(b"ply\n") or end < 0:
        raise ParseError(f"{path}: missing PLY header")
    lines = raw[:end].decode("ascii").splitlines()
    if "format binary_little_endian 1.0" not in lines:
        raise ParseError(f"{path}: only binary_little_endian PLY is supported")
    count, fields, current = None, [], None
    for line in lines:
        parts = line.split()
        if parts[:1] == ["element"]:
            current = parts[1]
            if current == "vertex":
                count = int(parts[2])
            elif count is None:
                raise ParseError(f"{path}: elements before vertex are not supported")
        elif parts[:1] == ["property"] and current == "vertex":
            if parts[1] == "list" or parts[1] not in _PLY_TYPES:
                raise ParseError(f"{path}: unsupported vertex property {line!r}")
            fields.append((parts[2], "<" + _PLY_TYPES[parts[1]]))
    if count is None:
        raise ParseError(f"{path}: no vertex element")
    verts = np.frombuffer(raw, dtype=np.dtype(fields), count=count, offset=end + len("end_header\n"))
    pos = np.stack([verts[k].astype(np.float64) for k in ("x", "y", "z")], axis=1)
    names = verts.dtype.names
    if all(k in names for k in ("red", "green", "blue")):
        col = np.stack([verts[k].astype(np.float64) / 255.0 for k in ("red", "green", "blue")], axis=1)
    else:
        col = np.zeros_like(pos)
    return PointCloud(pos, col)


# --------------------------------------------------------------------------
# focus areas


def write_focus_areas(areas, path) -> None:
    payload = [{"center": [float(v) for v in a.center], "radius": float(a.radius)} for a in areas]
    _write_text(path, json.dumps(payload, indent=2) + "\n")


def read_focus_areas(path):
    from nerfpc.focus import FocusArea

    try:
        payload = json.loads(Path(path).read_text())
        return [FocusArea(np.array(e["center"], dtype=np.float64), float(e["radius"])) for e in payload]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ParseError(f"{path}: {exc}") from exc


def ensure_parent(path) -> None:
    parent = os.path.dirname(os.fspath(path))
    if parent:
        os.makedirs(parent, exist_ok=True)
