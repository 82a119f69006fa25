"""Iterative phase retrieval with a fixed, known probe.

Serves as a classical reference reconstruction and as a consistency oracle
for the diffraction forward model. Sequential Fourier-magnitude projection
with real-space object updates; positions are visited in seeded random order
each sweep.
"""

from dataclasses import dataclass, field

import numpy as np

from . import circphase

MAG_GUARD = 1e-12


@dataclass
class EpieState:
    object_est: np.ndarray  # complex canvas
    probe: np.ndarray
    iterations: int
    error_history: list = field(default_factory=list)


def _intensity_of(frame):
    return np.asarray(getattr(frame, "intensity", frame), dtype=np.float64)


def fourier_magnitude_project(psi_f, sqrt_intensity):
    """Replace Fourier magnitudes by measured ones; tiny-magnitude pixels pass through."""
    mag = np.abs(psi_f)
    out = np.where(mag < MAG_GUARD, psi_f, sqrt_intensity * psi_f / np.maximum(mag, MAG_GUARD))
    return out


def epie_reconstruct(frames, positions, probe, iters=300, beta=0.9, seed=0,
                     canvas_shape=None):
    """Object-only updates; object initialized to 1+0i."""
    if not (0 < beta <= 1):
        raise ValueError("beta must be in (0, 1]")
    p_field = probe.grid.to_complex()
    p = p_field.shape[0]
    pmax2 = float(np.max(np.abs(p_field) ** 2))
    if pmax2 == 0:
        raise ValueError("degenerate probe")
    if canvas_shape is None:
        canvas_shape = (max(y for y, _ in positions) + p,
                        max(x for _, x in positions) + p)
    obj = np.ones(canvas_shape, dtype=np.complex128)
    update_gain = beta * np.conj(p_field) / pmax2

    sqrt_i = [np.sqrt(_intensity_of(f)) for f in frames]
    state = EpieState(object_est=obj, probe=p_field, iterations=0)
    n = len(positions)
    for sweep in range(iters):
        order = np.random.default_rng([seed, sweep]).permutation(n)
        err_num, err_den = 0.0, 0.0
        for j in order:
            y, x = positions[j]
            window = obj[y:y + p, x:x + p]
            psi = p_field * window
            psi_f = np.fft.fft2(psi, norm="ortho")
            err_num += float(np.sum((sqrt_i[j] - np.abs(psi_f)) ** 2))
            err_den += float(np.sum(sqrt_i[j] ** 2))
            psi_f2 = fourier_magnitude_project(psi_f, sqrt_i[j])
            psi2 = np.fft.ifft2(psi_f2, norm="ortho")
            obj[y:y + p, x:x + p] = window + update_gain * (psi2 - psi)
        state.error_history.append(err_num / max(err_den, 1e-300))
        state.iterations = sweep + 1
    return state


def illumination_map(positions, probe, canvas_shape):
    """Accumulated probe intensity over all scan positions."""
    p_int = np.abs(probe.grid.to_complex()) ** 2
    p = p_int.shape[0]
    acc = np.zeros(canvas_shape, dtype=np.float64)
    for y, x in positions:
        acc[y:y + p, x:x + p] += p_int
    return acc


def well_lit_mask(positions, probe, canvas_shape, threshold=0.1):
    acc = illumination_map(positions, probe, canvas_shape)
    return acc >= threshold * acc.max()


def align_global_phase(phase_est, phase_gt, mask=None):
    """Remove one global phase offset, estimated as the circular mean of the residual."""
    res = circphase.wrapped_diff(phase_gt, phase_est)
    if mask is not None:
        res = res[mask]
    offset = np.angle(np.mean(np.exp(1j * res)))
    return circphase.wrap_angle(np.asarray(phase_est, dtype=np.float64) + offset)
