"""Complex-field forward model: probe, exit wave, far-field intensity, detector noise.

FFTs use the orthonormal convention so Parseval holds exactly (to float
precision) between real and Fourier space.
"""

from dataclasses import dataclass

import numpy as np

PROBE_SIZE = 32
PROBE_RADIUS = 13.0
PROBE_SIGMA = 10.0
PROBE_CURVATURE = 0.02

NOISE_PEAK_PHOTONS = 1e4
NOISE_READ_FRACTION = 0.01  # read sigma default, as a fraction of dataset max


@dataclass
class ComplexGrid:
    """2-D complex field stored as separate f32 re/im buffers."""

    re: np.ndarray
    im: np.ndarray

    def __post_init__(self):
        self.re = np.ascontiguousarray(self.re, dtype=np.float32)
        self.im = np.ascontiguousarray(self.im, dtype=np.float32)
        if self.re.shape != self.im.shape or self.re.ndim != 2:
            raise ValueError("re/im must be matching 2-D grids")
        if not (np.all(np.isfinite(self.re)) and np.all(np.isfinite(self.im))):
            raise ValueError("non-finite field values")

    @classmethod
    def from_complex(cls, z):
        z = np.asarray(z)
        return cls(z.real, z.imag)

    def to_complex(self):
        return self.re.astype(np.complex128) + 1j * self.im.astype(np.complex128)

    @property
    def shape(self):
        return self.re.shape

    def intensity(self):
        return (self.re.astype(np.float64) ** 2 + self.im.astype(np.float64) ** 2).astype(np.float32)


@dataclass
class Probe:
    """Apodized circular-aperture probe with optional quadratic phase."""

    grid: ComplexGrid
    radius: float
    sigma: float
    curvature: float

    def __post_init__(self):
        h, w = self.grid.shape
        if h != w:
            raise ValueError("probe grid must be square")
        if float(np.sum(self.grid.intensity())) <= 0:
            raise ValueError("probe has zero total intensity")


def fft2_ortho(fld, direction="forward"):
    z = fld.to_complex()
    if z.size == 0:
        raise ValueError("zero-sized grid")
    if direction == "forward":
        out = np.fft.fft2(z, norm="ortho")
    elif direction == "inverse":
        out = np.fft.ifft2(z, norm="ortho")
    else:
        raise ValueError(f"unknown direction '{direction}'")
    return ComplexGrid.from_complex(out)


def make_probe(size=PROBE_SIZE, radius=PROBE_RADIUS, sigma=PROBE_SIGMA,
               curvature=PROBE_CURVATURE, seed=0):
    """Hard aperture x centered Gaussian amplitude, phase = curvature * r^2.

    Deterministic in its parameters; seed is reserved for optional speckle
    (off by default).
    """
    if not (0 < radius <= size / 2 * np.sqrt(2)):
        raise ValueError(f"degenerate radius {radius} for size {size}")
    center = (size - 1) / 2.0
    yy, xx = np.mgrid[0:size, 0:size]
    r2 = (yy - center) ** 2 + (xx - center) ** 2
    r = np.sqrt(r2)
    amp = (r <= radius) * np.exp(-r2 / (2.0 * sigma ** 2))
    phase = curvature * r2
    grid = ComplexGrid.from_complex(amp * np.exp(1j * phase))
    return Probe(grid=grid, radius=radius, sigma=sigma, curvature=curvature)


def exit_wave(object_patch, probe):
    """Elementwise complex product of object window and probe."""
    if object_patch.shape != probe.grid.shape:
        raise ValueError(f"patch {object_patch.shape} != probe {probe.grid.shape}")
    return ComplexGrid.from_complex(object_patch.to_complex() * probe.grid.to_complex())


def diffract(exit_field):
    """Far-field intensity |FFT(psi)|^2 under the orthonormal convention."""
    far = fft2_ortho(exit_field, "forward")
    return far.intensity()


def add_noise(intensity, peak_photons=NOISE_PEAK_PHOTONS, read_sigma=None,
              seed=0, frame_index=0, ref_max=None):
    """Poisson shot noise scaled to peak_photons at ref_max, plus Gaussian read noise.

    ref_max is the dataset-wide maximum intensity; defaults to the frame max.
    Deterministic per (seed, frame_index).
    """
    intensity = np.asarray(intensity, dtype=np.float64)
    if peak_photons <= 0 or np.any(intensity < 0):
        raise ValueError("peak_photons must be > 0 and intensity nonnegative")
    if ref_max is None:
        ref_max = float(intensity.max())
    if read_sigma is None:
        read_sigma = NOISE_READ_FRACTION * ref_max
    if read_sigma < 0:
        raise ValueError("read_sigma must be >= 0")
    rng = np.random.default_rng([int(seed), int(frame_index)])
    if ref_max > 0:
        photon_scale = peak_photons / ref_max
        noisy = rng.poisson(intensity * photon_scale) / photon_scale
    else:
        noisy = intensity.copy()
    if read_sigma > 0:
        noisy = noisy + rng.normal(0.0, read_sigma, size=intensity.shape)
    return np.maximum(noisy, 0.0).astype(np.float32)
