"""Circular phase geometry: unit-circle embedding, projection, recovery, distances.

Wrap convention is (-pi, pi] with pi mapped to itself.
"""

import numpy as np

from . import autodiff as ad

PROJECTION_EPS = 1e-8


def wrap_angle(phi):
    """Map any angle(s) to (-pi, pi]."""
    phi = np.asarray(phi, dtype=np.float64)
    return np.pi - np.mod(np.pi - phi, 2.0 * np.pi)


def embed(phase):
    """phi -> (cos phi, sin phi); result lies on the unit circle by construction."""
    phase = np.asarray(phase, dtype=np.float64)
    if not np.all(np.isfinite(phase)):
        raise ValueError("non-finite phase")
    return np.cos(phase).astype(np.float32), np.sin(phase).astype(np.float32)


def unit_project(c, s, eps=PROJECTION_EPS):
    """Normalize (c, s) to the unit circle: (c, s) / sqrt(c^2 + s^2 + eps).

    Accepts numpy arrays or autodiff Tensors; the Tensor path is differentiable.
    """
    if isinstance(c, ad.Tensor):
        mag = ad.sqrt_eps(ad.add(ad.square(c), ad.square(s)), eps)
        return ad.div(c, mag), ad.div(s, mag)
    c = np.asarray(c, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    mag = np.sqrt(c * c + s * s + eps)
    return (c / mag).astype(np.float32), (s / mag).astype(np.float32)


def recover_phase(c, s, return_degenerate_count=False):
    """atan2 recovery to (-pi, pi]; both-zero pixels yield 0 and are counted."""
    c = np.asarray(c, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    phase = np.arctan2(s, c)
    phase = np.where(phase == -np.pi, np.pi, phase)
    degenerate = int(np.count_nonzero((c == 0.0) & (s == 0.0)))
    if return_degenerate_count:
        return phase, degenerate
    return phase


def wrapped_diff(phi1, phi2):
    """Signed shortest-arc difference phi1 - phi2, in (-pi, pi]."""
    return wrap_angle(np.asarray(phi1, dtype=np.float64) - np.asarray(phi2, dtype=np.float64))


def geodesic_dist(phi1, phi2):
    """Shortest-arc angular distance, in [0, pi]."""
    return np.abs(wrapped_diff(phi1, phi2))
