"""Small trainable radiance field with one global and several focus-area branches.

Every branch contracts the query point into its own domain and hash-encodes
it; branch features are concatenated in branch order before the density
head. All branches are evaluated for every point, so the concatenated feature
is a continuous function of position.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from nerfpc.errors import ConfigError, IoError, ParseError
from nerfpc.field.encoding import HashEncoding, check_unit, contract, domain_bounds, sh_encode

CHECKPOINT_MAGIC = b"NPCFIELD"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ToyFieldConfig:
    levels: int = 8
    features: int = 2
    table_size: int = 2**14
    n_min: int = 16
    n_max: int = 256
    hidden: int = 64
    geo_features: int = 15
    sh_degree: int = 2
    max_areas: int = 5
    seed: int = 0


class ToyHashField(torch.nn.Module):
    def __init__(self, domains: Sequence, config: ToyFieldConfig = ToyFieldConfig()):
        super().__init__()
        if not domains:
            raise ConfigError("at least the global domain is required")
        if len(domains) - 1 > config.max_areas:
            raise ConfigError(f"{len(domains) - 1} local branches exceed max_areas={config.max_areas}")
        self.config = config
        self.domains = [tuple(np.asarray(b, dtype=np.float64) for b in domain_bounds(d)) for d in domains]
        for lo, hi in self.domains:
            contract(np.zeros(3), (lo, hi))  # validates extent
        gen = torch.Generator().manual_seed(config.seed)
        self.branches = torch.nn.ModuleList(
            HashEncoding(config.levels, config.features, config.table_size, config.n_min, config.n_max, generator=gen)
            for _ in self.domains
        )
        feat = sum(b.out_dim for b in self.branches)
        dt = torch.float64
        self.density_head = torch.nn.Sequential(
            torch.nn.Linear(feat, config.hidden, dtype=dt),
            torch.nn.ReLU(),
            torch.nn.Linear(config.hidden, 1 + config.geo_features, dtype=dt),
        )
        sh_dim = (config.sh_degree + 1) ** 2
        self.color_head = torch.nn.Sequential(
            torch.nn.Linear(config.geo_features + sh_dim, config.hidden, dtype=dt),
            torch.nn.ReLU(),
            torch.nn.Linear(config.hidden, 3, dtype=dt),
        )
        with torch.no_grad():
            for layer in [*self.density_head, *self.color_head]:
                if isinstance(layer, torch.nn.Linear):
                    bound = layer.in_features ** -0.5
                    layer.weight.copy_((torch.rand(layer.weight.shape, generator=gen, dtype=dt) * 2 - 1) * bound)
                    layer.bias.copy_((torch.rand(layer.bias.shape, generator=gen, dtype=dt) * 2 - 1) * bound)

    @property
    def num_local(self) -> int:
        return len(self.domains) - 1

    def encode(self, positions: torch.Tensor) -> torch.Tensor:
        feats = [enc(contract(positions, dom)) for enc, dom in zip(self.branches, self.domains)]
        return torch.cat(feats, dim=-1)

    def forward(self, positions: torch.Tensor, directions: torch.Tensor):
        h = self.density_head(self.encode(positions))
        sigma = torch.nn.functional.softplus(h[:, 0])
        sh = sh_encode(directions, self.config.sh_degree, check=False)
        rgb = torch.sigmoid(self.color_head(torch.cat([h[:, 1:], sh], dim=-1)))
        return sigma, rgb

    def query(self, positions, directions, chunk: int = 1 << 16):
        """Frozen-field evaluation on numpy arrays; returns (sigma, rgb)."""
        pos = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        dirs = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
        check_unit(dirs)
        sig = np.empty(len(pos))
        rgb = np.empty((len(pos), 3))
        with torch.no_grad():
            for s in range(0, len(pos), chunk):
                a, b = self.forward(torch.from_numpy(pos[s : s + chunk]), torch.from_numpy(dirs[s : s + chunk]))
                sig[s : s + chunk] = a.numpy()
                rgb[s : s + chunk] = b.numpy()
        return sig, rgb

    # -- checkpoints ---------------------------------------------------------

    def save(self, path) -> None:
        header = json.dumps(
            {"config": asdict(self.config), "domains": [[lo.tolist(), hi.tolist()] for lo, hi in self.domains]},
            sort_keys=True,
        ).encode()
        body = io.BytesIO()
        state = self.state_dict()
        for name in sorted(state):
            arr = state[name].detach().cpu().numpy()
            if arr.dtype != np.float64:
                continue
            key = name.encode()
            body.write(struct.pack("<I", len(key)) + key)
            body.write(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
            body.write(arr.astype("<f8").tobytes())
        payload = CHECKPOINT_MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(header)) + header + body.getvalue()
        try:
            Path(path).write_bytes(payload)
        except OSError as exc:
            raise IoError(f"{path}: {exc}") from exc

    @classmethod
    def load(cls, path) -> "ToyHashField":
        try:
            raw = Path(path).read_bytes()
        except OSError as exc:
            raise IoError(f"{path}: {exc}") from exc
        if not raw.startswith(CHECKPOINT_MAGIC):
            raise ParseError(f"{path}: not a field checkpoint")
        pos = len(CHECKPOINT_MAGIC)
        version, hlen = struct.unpack_from("<II", raw, pos)
        if version != CHECKPOINT_VERSION:
            raise ParseError(f"{path}: unsupported checkpoint version {version}")
        pos += 8
        meta = json.loads(raw[pos : pos + hlen])
        pos += hlen
        field = cls([tuple(d) for d in meta["domains"]], ToyFieldConfig(**meta["config"]))
        state = field.state_dict()
        while pos < len(raw):
            (klen,) = struct.unpack_from("<I", raw, pos)
            name = raw[pos + 4 : pos + 4 + klen].decode()
            pos += 4 + klen
            (ndim,) = struct.unpack_from("<I", raw, pos)
            shape = struct.unpack_from(f"<{ndim}Q", raw, pos + 4)
            pos += 4 + 8 * ndim
            count = int(np.prod(shape))
            arr = np.frombuffer(raw, dtype="<f8", count=count, offset=pos).reshape(shape)
            pos += 8 * count
            state[name] = torch.from_numpy(arr.copy())
        field.load_state_dict(state)
        return field


def build_toy_field(poses, focus_areas=(), config: ToyFieldConfig = ToyFieldConfig(), box_scale: float = 2.0) -> ToyHashField:
    """Global branch over the scene box of ``poses`` plus one branch per focus area."""
    from nerfpc.focus import scene_box

    return ToyHashField([scene_box(poses, box_scale), *[a.cube for a in focus_areas]], config)
