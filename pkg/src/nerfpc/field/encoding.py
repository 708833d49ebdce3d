"""Scene contraction, spherical-harmonic direction encoding and the multiresolution hash grid."""

from __future__ import annotations

import math

import numpy as np
import torch

from nerfpc.errors import DegenerateDomain, NonUnitDirection

HASH_PRIMES = (1, 2654435761, 805459861)
_CORNERS = np.array([[(c >> 2) & 1, (c >> 1) & 1, c & 1] for c in range(8)], dtype=np.int64)


def domain_bounds(domain) -> tuple[np.ndarray, np.ndarray]:
    """(lo, hi) of a box given as a pair or as anything with a ``cube`` attribute."""
    lo, hi = domain.cube if hasattr(domain, "cube") else domain
    return np.asarray(lo, dtype=np.float64), np.asarray(hi, dtype=np.float64)


def normalize_to_domain(p, domain):
    lo, hi = domain_bounds(domain)
    half = (hi - lo) / 2
    if np.any(half <= 0):
        raise DegenerateDomain(f"domain has zero extent: {lo} .. {hi}")
    center = (lo + hi) / 2
    if isinstance(p, torch.Tensor):
        return (p - torch.as_tensor(center, dtype=p.dtype)) / torch.as_tensor(half, dtype=p.dtype)
    return (np.asarray(p, dtype=np.float64) - center) / half


def radial_contract(q):
    """Identity inside the unit ball, ``(2 - 1/|q|) q/|q|`` outside."""
    if isinstance(q, torch.Tensor):
        norm = torch.linalg.norm(q, dim=-1, keepdim=True)
        safe = torch.clamp(norm, min=1.0)
        return torch.where(norm <= 1.0, q, (2.0 - 1.0 / safe) * (q / safe))
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    safe = np.maximum(norm, 1.0)
    return np.where(norm <= 1.0, q, (2.0 - 1.0 / safe) * (q / safe))


def contract(p, domain):
    """Map ``p`` so ``domain`` fills [-1, 1]^3, then squash everything into the radius-2 ball."""
    return radial_contract(normalize_to_domain(p, domain))


def check_unit(directions, tol: float = 1e-6) -> None:
    d = directions.detach().cpu().numpy() if isinstance(directions, torch.Tensor) else np.asarray(directions)
    norms = np.linalg.norm(d.reshape(-1, 3), axis=1)
    if norms.size and np.abs(norms - 1.0).max() > tol:
        raise NonUnitDirection(f"direction norm off by {np.abs(norms - 1.0).max():.2e}")


def _sh_terms(x, y, z, degree: int) -> list:
    xx, yy, zz = x * x, y * y, z * z
    out = [0.28209479177387814 + 0.0 * x]
    if degree >= 1:
        out += [0.4886025119029199 * y, 0.4886025119029199 * z, 0.4886025119029199 * x]
    if degree >= 2:
        out += [
            1.0925484305920792 * x * y,
            1.0925484305920792 * y * z,
            0.31539156525252005 * (3 * zz - 1),
            1.0925484305920792 * x * z,
            0.5462742152960396 * (xx - yy),
        ]
    if degree >= 3:
        out += [
            0.5900435899266435 * y * (3 * xx - yy),
            2.890611442640554 * x * y * z,
            0.4570457994644658 * y * (5 * zz - 1),
            0.3731763325901154 * z * (5 * zz - 3),
            0.4570457994644658 * x * (5 * zz - 1),
            1.445305721320277 * z * (xx - yy),
            0.5900435899266435 * x * (xx - 3 * yy),
        ]
    if degree >= 4:
        out += [
            2.5033429417967046 * x * y * (xx - yy),
            1.7701307697799304 * y * z * (3 * xx - yy),
            0.9461746957575601 * x * y * (7 * zz - 1),
            0.6690465435572892 * y * z * (7 * zz - 3),
            0.10578554691520431 * (35 * zz * zz - 30 * zz + 3),
            0.6690465435572892 * x * z * (7 * zz - 3),
            0.47308734787878004 * (xx - yy) * (7 * zz - 1),
            1.7701307697799304 * x * z * (xx - 3 * yy),
            0.6258357354491761 * (xx * (xx - 3 * yy) - yy * (3 * xx - yy)),
        ]
    return out


def sh_encode(directions, degree: int = 4, check: bool = True):
    """Real spherical harmonics (orthonormal on the sphere) up to ``degree`` <= 4."""
    if not 0 <= degree <= 4:
        raise ValueError("sh degree must be in 0..4")
    if check:
        check_unit(directions)
    if isinstance(directions, torch.Tensor):
        terms = _sh_terms(directions[..., 0], directions[..., 1], directions[..., 2], degree)
        return torch.stack(terms, dim=-1)
    d = np.asarray(directions, dtype=np.float64)
    return np.stack(_sh_terms(d[..., 0], d[..., 1], d[..., 2], degree), axis=-1)


def level_resolutions(levels: int, n_min: int, n_max: int) -> np.ndarray:
    if levels == 1:
        return np.array([n_min], dtype=np.int64)
    growth = math.exp((math.log(n_max) - math.log(n_min)) / (levels - 1))
    return np.floor(n_min * growth ** np.arange(levels) + 1e-9).astype(np.int64)


def spatial_hash(coords, table_size: int):
    """XOR of 32-bit wrapped coordinate-prime products, modulo ``table_size``."""
    mask = 0xFFFFFFFF
    if isinstance(coords, torch.Tensor):
        h = (coords[..., 0] * HASH_PRIMES[0]) & mask
        h = h ^ ((coords[..., 1] * HASH_PRIMES[1]) & mask)
        h = h ^ ((coords[..., 2] * HASH_PRIMES[2]) & mask)
        return h % table_size
    c = np.asarray(coords, dtype=np.int64)
    h = (c[..., 0] * HASH_PRIMES[0]) & mask
    h ^= (c[..., 1] * HASH_PRIMES[1]) & mask
    h ^= (c[..., 2] * HASH_PRIMES[2]) & mask
    return h % table_size


class HashEncoding(torch.nn.Module):
    """Multiresolution hash grid over the contracted ball ``[-2, 2]^3``."""

    def __init__(
        self,
        levels: int = 8,
        features: int = 2,
        table_size: int = 2**14,
        n_min: int = 16,
        n_max: int = 256,
        init_scale: float = 1e-4,
        generator: torch.Generator | None = None,
        dtype=torch.float64,
    ):
        super().__init__()
        self.levels, self.features, self.table_size = levels, features, table_size
        self.n_min, self.n_max = n_min, n_max
        self.register_buffer("resolutions", torch.as_tensor(level_resolutions(levels, n_min, n_max)))
        table = (torch.rand(levels, table_size, features, generator=generator, dtype=dtype) * 2 - 1) * init_scale
        self.table = torch.nn.Parameter(table)
        self.register_buffer("corners", torch.as_tensor(_CORNERS))

    @property
    def out_dim(self) -> int:
        return self.levels * self.features

    def corner_indices(self, x_tilde: torch.Tensor):
        """Hash-table rows (N, L, 8) and trilinear weights (N, L, 8) for contracted points."""
        unit = torch.clamp((x_tilde + 2.0) / 4.0, 0.0, 1.0)
        pos = unit[:, None, :] * self.resolutions[None, :, None].to(unit.dtype)
        base = torch.floor(pos)
        frac = pos - base
        # per-axis hashed terms for the lower and upper lattice coordinate, (N, L, 3, 2)
        lower = base.to(torch.int64)
        both = torch.stack([lower, lower + 1], dim=-1)
        primes = torch.as_tensor(HASH_PRIMES, dtype=torch.int64)[None, None, :, None]
        terms = (both * primes) & 0xFFFFFFFF
        hx, hy, hz = terms[:, :, 0], terms[:, :, 1], terms[:, :, 2]
        h = hx[..., :, None, None] ^ hy[..., None, :, None] ^ hz[..., None, None, :]
        h = h & (self.table_size - 1) if self.table_size & (self.table_size - 1) == 0 else h % self.table_size
        idx = h.reshape(*h.shape[:2], 8)
        wts = torch.stack([1 - frac, frac], dim=-1)
        wx, wy, wz = wts[:, :, 0], wts[:, :, 1], wts[:, :, 2]
        w = (wx[..., :, None, None] * wy[..., None, :, None] * wz[..., None, None, :]).reshape(*h.shape[:2], 8)
        return idx, w

    def forward(self, x_tilde: torch.Tensor) -> torch.Tensor:
        idx, w = self.corner_indices(x_tilde)
        level_offset = (torch.arange(self.levels, device=idx.device) * self.table_size)[None, :, None]
        flat = self.table.reshape(-1, self.features)
        feats = flat[(idx + level_offset).reshape(-1)].reshape(*idx.shape, self.features)
        return (feats * w[..., None]).sum(dim=2).reshape(len(x_tilde), -1)


def hash_encode(encoding: HashEncoding, x_tilde) -> np.ndarray:
    """Numpy convenience wrapper around :class:`HashEncoding`."""
    table = encoding.table
    x = torch.as_tensor(np.asarray(x_tilde, dtype=np.float64).reshape(-1, 3), dtype=table.dtype)
    with torch.no_grad():
        return encoding(x).cpu().numpy()
