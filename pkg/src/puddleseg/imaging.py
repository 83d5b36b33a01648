"""Deterministic image-processing kernels.

Shared by the lateral encoder adapter and the style prompter:

- histogram equalization (CDF remapping over quantized levels)
- 2-D FFT / inverse FFT in amplitude+phase form
- amplitude-only reconstruction (phase stripped before the inverse transform)
- ideal radial high-pass filtering

All functions are pure and operate on 2-D float arrays. Images are expected
in [0, 1]; spectral fields and filter outputs are unbounded reals.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .validation import check_field, check_image

DEFAULT_LEVELS = 256
DEFAULT_CUTOFF_RATIO = 0.25


@dataclass
class Spectrum:
    """Amplitude/phase decomposition of the unnormalized forward 2-D DFT.

    amplitude is non-negative; phase lies in (-pi, pi]. For spectra of real
    images the amplitude is conjugate-symmetric:
    A(u, v) == A((-u) mod H, (-v) mod W).
    """

    height: int
    width: int
    amplitude: np.ndarray
    phase: np.ndarray

    def validate(self) -> None:
        if self.amplitude.shape != (self.height, self.width):
            raise ValueError("amplitude shape disagrees with height/width")
        if self.phase.shape != (self.height, self.width):
            raise ValueError("phase shape disagrees with height/width")
        if np.any(self.amplitude < 0):
            raise ValueError("amplitude must be non-negative")


class RealField(NamedTuple):
    """Real part of an inverse transform plus its imaginary residue."""

    field: np.ndarray
    imag_residue: float


def equalize_histogram(img: np.ndarray, levels: int = DEFAULT_LEVELS) -> np.ndarray:
    """Histogram-equalize a [0, 1] image over `levels` quantization bins.

    Pixels are quantized to integer levels by rounding, and each level v is
    remapped through the standard CDF rule

        v' = (cdf(v) - cdf_min) / (1 - cdf_min)

    where cdf_min is the CDF value of the lowest occupied level. The mapping
    is monotone non-decreasing, so ranks of distinct pixel values are
    preserved. A single-valued image has a degenerate CDF (cdf_min == 1) and
    is returned unchanged.
    """
    img = check_image(img)
    if levels < 2:
        raise ValueError("levels must be >= 2")
    q = np.rint(img * (levels - 1)).astype(np.int64)
    hist = np.bincount(q.ravel(), minlength=levels)
    cdf = np.cumsum(hist) / q.size
    occupied = np.nonzero(hist)[0]
    cdf_min = cdf[occupied[0]]
    if cdf_min >= 1.0:
        return img.copy()
    mapped = (cdf - cdf_min) / (1.0 - cdf_min)
    mapped = np.clip(mapped, 0.0, 1.0)
    return mapped[q]


def fft2(img: np.ndarray) -> Spectrum:
    """Unnormalized forward 2-D DFT of a real field, as amplitude + phase."""
    img = check_field(img)
    f = np.fft.fft2(img)
    return Spectrum(
        height=img.shape[0],
        width=img.shape[1],
        amplitude=np.abs(f),
        phase=np.angle(f),
    )


def ifft2(spec: Spectrum) -> RealField:
    """Normalized inverse 2-D DFT of amplitude * exp(j*phase).

    Returns the real part of the inverse transform together with the maximum
    absolute imaginary residue. For conjugate-symmetric input the residue is
    pure float noise (<= 1e-6); callers are expected to assert it.
    """
    spec.validate()
    f = spec.amplitude * np.exp(1j * spec.phase)
    out = np.fft.ifft2(f)
    return RealField(field=out.real, imag_residue=float(np.abs(out.imag).max()))


def amplitude_only_reconstruct(img: np.ndarray) -> np.ndarray:
    """Reconstruct an image from its amplitude spectrum alone.

    The phase is set to zero everywhere before the inverse transform, so the
    result keeps texture/illumination statistics but discards spatial layout.
    The output is a real field, not clamped to [0, 1].
    """
    spec = fft2(img)
    flat = Spectrum(
        height=spec.height,
        width=spec.width,
        amplitude=spec.amplitude,
        phase=np.zeros_like(spec.phase),
    )
    return ifft2(flat).field


def _radial_keep_mask(height: int, width: int, cutoff_ratio: float) -> np.ndarray:
    """Boolean mask of spectrum bins kept by the ideal high-pass filter.

    Bin (u, v) is dropped when its centered frequency radius
    hypot(fu, fv) falls below cutoff_ratio * min(H, W) / 2, where fu/fv are
    signed frequencies in bin units (fftfreq * size).
    """
    fu = np.fft.fftfreq(height) * height
    fv = np.fft.fftfreq(width) * width
    radius = np.hypot(fu[:, None], fv[None, :])
    return radius >= cutoff_ratio * min(height, width) / 2.0


def high_pass_filter(img: np.ndarray, cutoff_ratio: float = DEFAULT_CUTOFF_RATIO) -> np.ndarray:
    """Ideal (hard-mask) radial high-pass filter.

    Zeroes every spectrum bin with centered frequency radius below
    cutoff_ratio * min(H, W) / 2 and inverse-transforms. Any positive cutoff
    removes the DC bin, so the output has zero mean.
    """
    img = check_field(img)
    if not 0.0 < cutoff_ratio < 1.0:
        raise ValueError("cutoff_ratio must lie in (0, 1)")
    f = np.fft.fft2(img)
    f *= _radial_keep_mask(img.shape[0], img.shape[1], cutoff_ratio)
    return np.fft.ifft2(f).real
