"""Band-limited angular spectrum propagation (forward and adjoint).

Per channel the field is zero-padded (centred) to ``pad_factor`` times its
size, transformed with an unscaled forward DFT whose zero frequency sits at
index ``N // 2``, multiplied by ``exp(j kz d)`` inside the anti-aliasing
band and zero outside, optionally cut by a circular aperture in frequency
space, inverse-transformed (scaled by ``1/N``) and cropped back.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .field import ComplexField

DEFAULT_WAVELENGTHS = (639e-9, 532e-9, 473e-9)
DEFAULT_PITCH = 3.74e-6


@dataclass(frozen=True)
class PropagationSpec:
    wavelengths: tuple[float, ...] = DEFAULT_WAVELENGTHS
    pixel_pitch: float = DEFAULT_PITCH
    pad_factor: int = 2
    aperture_radius: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "wavelengths", tuple(float(w) for w in self.wavelengths))
        if not self.wavelengths or min(self.wavelengths) <= 0:
            raise ValueError("wavelengths must be strictly positive")
        if self.pixel_pitch <= 0:
            raise ValueError("pixel_pitch must be strictly positive")
        if int(self.pad_factor) != self.pad_factor or self.pad_factor < 1:
            raise ValueError("pad_factor must be an integer >= 1")
        if self.aperture_radius < 0:
            raise ValueError("aperture_radius must be >= 0")

    @property
    def channels(self) -> int:
        return len(self.wavelengths)


@dataclass
class TransferGrid:
    """Transfer-function samples on a centred (ny, nx) frequency grid."""

    fx: np.ndarray  # (nx,) cycles / m
    fy: np.ndarray  # (ny,)
    kz: np.ndarray  # (ny, nx) rad / m
    inside_bandlimit: np.ndarray  # (ny, nx) bool
    aperture: np.ndarray  # (ny, nx) bool, all True when disabled
    H: np.ndarray  # (ny, nx) complex; zero outside band or aperture


def bandlimit(wavelength: float, distance: float, extent: float) -> float:
    """Largest propagating frequency along one axis for a window of ``extent`` metres."""
    return 1.0 / (wavelength * np.sqrt((2.0 * abs(distance) / extent) ** 2 + 1.0))


@lru_cache(maxsize=64)
def _transfer(wavelength: float, pitch: float, distance: float, ny: int, nx: int, aperture: float):
    k = 2.0 * np.pi / wavelength
    lx, ly = nx * pitch, ny * pitch
    fx = (np.arange(nx) - nx // 2) / lx
    fy = (np.arange(ny) - ny // 2) / ly
    fxx, fyy = np.meshgrid(fx, fy)
    inside = (np.abs(fxx) < bandlimit(wavelength, distance, lx)) & (np.abs(fyy) < bandlimit(wavelength, distance, ly))
    kz2 = k * k - (2.0 * np.pi) ** 2 * (fxx**2 + fyy**2)
    kz = np.where(kz2 > 0, np.sqrt(np.maximum(kz2, 0.0)), 0.0)
    if aperture > 0:
        ix, iy = np.meshgrid(np.arange(nx), np.arange(ny))
        ox = ix - nx / 2 + 0.5
        oy = iy - ny / 2 + 0.5
        ap = ox**2 + oy**2 < aperture**2
    else:
        ap = np.ones((ny, nx), dtype=bool)
    H = np.where(inside & ap, np.cos(kz * distance) + 1j * np.sin(kz * distance), 0.0)
    for a in (fx, fy, kz, inside, ap, H):
        a.setflags(write=False)
    return TransferGrid(fx, fy, kz, inside, ap, H)


def transfer_function(spec: PropagationSpec, distance: float, channel: int, padded_dims: tuple[int, int]) -> TransferGrid:
    ny, nx = padded_dims
    if ny <= 0 or nx <= 0:
        raise ValueError("padded_dims must be positive")
    return _transfer(spec.wavelengths[channel], spec.pixel_pitch, float(distance), int(ny), int(nx),
                     float(spec.aperture_radius))


def padded_dims(spec: PropagationSpec, height: int, width: int) -> tuple[int, int]:
    return height * spec.pad_factor, width * spec.pad_factor


def _pad_offsets(n: int, padded: int) -> int:
    return (padded - n) // 2


def _apply(u: np.ndarray, spec: PropagationSpec, distance: float, conjugate: bool) -> np.ndarray:
    c, h, w = u.shape
    if c != spec.channels:
        raise ValueError(f"field has {c} channels but spec has {spec.channels} wavelengths")
    ny, nx = padded_dims(spec, h, w)
    oy, ox = _pad_offsets(h, ny), _pad_offsets(w, nx)
    out = np.empty((c, h, w), dtype=np.complex128)
    buf = np.zeros((ny, nx), dtype=np.complex128)
    for ch in range(c):
        H = transfer_function(spec, distance, ch, (ny, nx)).H
        if conjugate:
            H = np.conj(H)
        buf[:] = 0.0
        buf[oy:oy + h, ox:ox + w] = u[ch]
        spectrum = np.fft.fftshift(np.fft.fft2(buf))
        spectrum *= H
        prop = np.fft.ifft2(np.fft.ifftshift(spectrum))
        out[ch] = prop[oy:oy + h, ox:ox + w]
    return out


def propagate_array(u: np.ndarray, spec: PropagationSpec, distance: float) -> np.ndarray:
    """Complex-array variant of :func:`propagate` (C x H x W complex128 in and out)."""
    if not np.isfinite(distance):
        raise ValueError("distance must be finite")
    return _apply(np.asarray(u, dtype=np.complex128), spec, distance, conjugate=False)


def propagate_backward_array(g: np.ndarray, spec: PropagationSpec, distance: float) -> np.ndarray:
    """Adjoint of :func:`propagate_array`: same pipeline with the conjugate transfer."""
    if not np.isfinite(distance):
        raise ValueError("distance must be finite")
    return _apply(np.asarray(g, dtype=np.complex128), spec, distance, conjugate=True)


def propagate(field: ComplexField, spec: PropagationSpec, distance: float) -> ComplexField:
    return ComplexField.from_complex(propagate_array(field.to_complex(), spec, distance))


def propagate_backward(grad_out: ComplexField, spec: PropagationSpec, distance: float) -> ComplexField:
    """Map dL/dRe + j dL/dIm at the output plane back to the input plane."""
    return ComplexField.from_complex(propagate_backward_array(grad_out.to_complex(), spec, distance))


def passband_projection(u: np.ndarray, spec: PropagationSpec, distance: float) -> np.ndarray:
    """Zero the frequencies the propagator drops (band and aperture), keep the rest.

    Operates on the padded grid and crops back. With ``pad_factor == 1`` this
    equals ``propagate_backward(propagate(u))``; with padding the crop in
    between also discards energy that leaves the window.
    """
    u = np.asarray(u, dtype=np.complex128)
    c, h, w = u.shape
    ny, nx = padded_dims(spec, h, w)
    oy, ox = _pad_offsets(h, ny), _pad_offsets(w, nx)
    out = np.empty_like(u)
    for ch in range(c):
        grid = transfer_function(spec, distance, ch, (ny, nx))
        buf = np.zeros((ny, nx), dtype=np.complex128)
        buf[oy:oy + h, ox:ox + w] = u[ch]
        spectrum = np.fft.fftshift(np.fft.fft2(buf)) * (grid.inside_bandlimit & grid.aperture)
        out[ch] = np.fft.ifft2(np.fft.ifftshift(spectrum))[oy:oy + h, ox:ox + w]
    return out
