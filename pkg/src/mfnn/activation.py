"""Periodic activations.

EAS is the trainable activation used inside the network::

    EAS(x) = sin(omega * x + phi)          x >= 0
    EAS(x) = x / (1 + |x|) + sin(phi)      x <  0

with one ``(omega, phi)`` pair per channel, ``omega >= 0`` and
``phi`` in ``[-pi, pi]``.  EUAF and SinTrx are fixed reference activations
kept for comparison experiments.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .numerics import get_dtype

OMEGA_INIT = (0.5, 3.0)
PHI_INIT = (-np.pi / 2, np.pi / 2)


def project_omega(omega):
    """Clamp frequencies at zero in place."""
    np.maximum(omega, 0.0, out=omega)
    return omega


def project_phi(phi):
    """Wrap out-of-range phases into ``[-pi, pi]`` in place.

    In-range values are left bit-for-bit untouched.
    """
    out = (phi < -np.pi) | (phi > np.pi)
    if np.any(out):
        phi[out] = np.remainder(phi[out] + np.pi, 2 * np.pi) - np.pi
    return phi


@dataclass
class EasParams:
    omega: np.ndarray
    phi: np.ndarray

    @classmethod
    def init(cls, channels, rng):
        dtype = get_dtype()
        omega = rng.uniform(*OMEGA_INIT, size=channels).astype(dtype)
        phi = rng.uniform(*PHI_INIT, size=channels).astype(dtype)
        return cls(omega, phi)

    @property
    def channels(self):
        return self.omega.shape[0]

    def project(self):
        project_omega(self.omega)
        project_phi(self.phi)
        return self


def _per_channel(x, p):
    if x.ndim < 2 or x.shape[1] != p.channels:
        raise ShapeError("eas", f"{p.channels} channels on axis 1", f"shape {x.shape}")
    tail = (1,) * (x.ndim - 2)
    return p.omega.reshape(-1, *tail), p.phi.reshape(-1, *tail)


def _pieces(x, p):
    omega, phi = _per_channel(x, p)
    # blend with a 0/1 mask instead of np.where: both pieces are finite everywhere
    pos = (x >= 0).astype(x.dtype)
    xn = np.minimum(x, 0)
    return omega, phi, pos, xn


def eas_forward(x, p):
    omega, phi, pos, xn = _pieces(x, p)
    return pos * np.sin(omega * x + phi) + (1 - pos) * (xn / (1 - xn) + np.sin(phi))


def eas_backward(x, p, dy):
    """Return ``(dx, domega, dphi)``; parameter grads are summed per channel."""
    if dy.shape != x.shape:
        raise ShapeError("eas_backward", f"upstream {x.shape}", f"{dy.shape}")
    omega, phi, pos, xn = _pieces(x, p)
    neg = 1 - pos
    gc = dy * pos * np.cos(omega * x + phi)
    dx = gc * omega + dy * neg / (1 - xn) ** 2
    axes = (0,) + tuple(range(2, x.ndim))
    domega = (gc * x).sum(axis=axes)
    dphi = gc.sum(axis=axes) + (dy * neg).sum(axis=axes) * np.cos(p.phi)
    return dx, domega, dphi


def euaf(x):
    x = np.asarray(x, dtype=float)
    xn = np.minimum(x, 0.0)
    tri = np.abs(x - 2 * np.floor((x + 1) / 2))
    return np.where(x >= 0, tri, xn / (1 + np.abs(xn)))


def sintrx(x):
    x = np.asarray(x, dtype=float)
    inner = np.abs(x) <= 1
    return np.where(inner, 2 / np.pi * np.arcsin(np.clip(x, -1, 1)), np.sin(np.pi / 2 * x))
