"""Collinearity penalty between three rendered depths along nearby rays.

For rays ``u0, u1, u2`` from a shared origin, the depth at which the middle
ray meets the chord between ``d0*u0`` and ``d2*u2`` is

    d1_hat = d0*d2*|u0 x u2| / (d0*|u0 x u1| + d2*|u1 x u2|)

The penalty compares the rendered middle depth against it through a
saturating ``tanh``, gated by a relative closeness indicator and a color
similarity weight. Both gates are constants for differentiation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from nerfpc.errors import ConfigError, DegenerateDirections

DENOM_EPS = 1e-12


@dataclass(frozen=True)
class CollinearityParams:
    tau: float = 4.0
    gamma: float = 0.1
    eps2: float = 0.0025
    max_segment: int = 40

    def __post_init__(self):
        if not (self.tau > 0 and self.gamma > 0 and self.eps2 > 0 and self.max_segment > 0):
            raise ConfigError("collinearity parameters must be positive")


def _cross_norm(a, b) -> np.ndarray:
    return np.linalg.norm(np.cross(a, b), axis=-1)


def _midpoint_terms(d0, d2, u0, u1, u2):
    a = _cross_norm(u0, u2)
    b = _cross_norm(u0, u1)
    c = _cross_norm(u1, u2)
    den = d0 * b + d2 * c
    return a, b, c, den


def expected_midpoint_depth(d0, d2, u0, u1, u2):
    """Depth along ``u1`` of the line through ``d0*u0`` and ``d2*u2``."""
    d0, d2 = np.asarray(d0, dtype=np.float64), np.asarray(d2, dtype=np.float64)
    a, _, _, den = _midpoint_terms(d0, d2, np.asarray(u0, float), np.asarray(u1, float), np.asarray(u2, float))
    if np.any(den <= DENOM_EPS):
        raise DegenerateDirections("ray directions are (nearly) parallel")
    out = d0 * d2 * a / den
    return float(out) if out.ndim == 0 else out


def color_weight(c0, c1, c2, gamma: float = 0.1):
    c0, c1, c2 = (np.asarray(c, dtype=np.float64) for c in (c0, c1, c2))
    gap = np.sum((c1 - c0) ** 2, axis=-1) + np.sum((c2 - c1) ** 2, axis=-1)
    return np.exp(-gap / (2.0 * gamma**2))


def collinearity_loss(d0, d1, d2, c0, c1, c2, u0, u1, u2, params: CollinearityParams = CollinearityParams()):
    """Loss value and its partials with respect to ``d0, d1, d2``.

    Works on scalars or on batches (leading axis). Degenerate direction
    triples contribute zero loss and zero gradient.
    """
    d0, d1, d2 = (np.asarray(d, dtype=np.float64) for d in (d0, d1, d2))
    u0, u1, u2 = (np.asarray(u, dtype=np.float64) for u in (u0, u1, u2))
    a, b, c, den = _midpoint_terms(d0, d2, u0, u1, u2)
    ok = den > DENOM_EPS
    safe = np.where(ok, den, 1.0)
    d_hat = d0 * d2 * a / safe
    delta = d1 - d_hat
    chi = (np.abs(delta) <= params.eps2 * np.minimum(np.minimum(d0, d1), d2)) & ok
    omega = color_weight(c0, c1, c2, params.gamma)
    rho = np.tanh(params.tau * np.abs(delta))
    gate = np.where(chi, omega, 0.0)
    value = gate * rho
    # np.sign(0) == 0 gives the zero subgradient at the minimum
    g_delta = gate * params.tau * (1.0 - rho**2) * np.sign(delta)
    g_d0 = -g_delta * d2**2 * a * c / safe**2
    g_d2 = -g_delta * d0**2 * a * b / safe**2
    out = (value, g_d0, g_delta, g_d2)
    if value.ndim == 0:
        return tuple(float(x) for x in out)
    return out
