"""Multi-plane reconstruction objectives.

Reconstructions are intensity stacks ``recon[l, c, y, x]`` (one per depth
plane); the target is a single linear-intensity image shared by every plane,
with per-plane binary masks from the quantised depth map. Squared norms are
averaged over the C x H x W pixels of a plane. Every loss can also return
its gradient with respect to ``recon``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

SSIM_WEIGHT = 0.005
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


@dataclass(frozen=True)
class DepthPlaneSet:
    """``count`` planes spaced by ``spacing`` metres and centred on ``center_distance``."""

    count: int
    center_distance: float
    spacing: float

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("need at least one depth plane")

    @property
    def distances(self) -> np.ndarray:
        l = np.arange(1, self.count + 1)
        return self.center_distance + (l - (self.count + 1) / 2.0) * self.spacing


@dataclass
class TargetStack:
    intensity: np.ndarray  # (C, H, W) linear intensity in [0, 1]
    depth: np.ndarray  # (H, W) normalised depth in [0, 1]
    masks: np.ndarray  # (L, H, W) bool, exactly one plane per pixel

    def __post_init__(self):
        self.intensity = np.asarray(self.intensity, dtype=np.float64)
        self.depth = np.asarray(self.depth, dtype=np.float64)
        self.masks = np.asarray(self.masks, dtype=bool)
        if self.intensity.ndim != 3:
            raise ValueError("target intensity must be C x H x W")
        hw = self.intensity.shape[1:]
        if self.depth.shape != hw or self.masks.shape[1:] != hw:
            raise ValueError(f"depth {self.depth.shape} / masks {self.masks.shape} do not match image {hw}")
        if not np.all(np.isfinite(self.intensity)):
            raise ValueError("target intensity must be finite")
        if self.intensity.min() < 0 or self.intensity.max() > 1:
            raise ValueError("target intensity must lie in [0, 1]")
        if not np.all(self.masks.sum(axis=0) == 1):
            raise ValueError("masks must assign every pixel to exactly one plane")

    @property
    def planes(self) -> int:
        return self.masks.shape[0]

    @classmethod
    def from_image(cls, intensity, depth, planes: int, near_is_high: bool = True) -> "TargetStack":
        depth = np.asarray(depth, dtype=np.float64)
        return cls(intensity, depth, build_masks(depth, planes, near_is_high))

    def plane(self, l: int) -> "TargetStack":
        """Single-plane view (its mask need not cover every pixel)."""
        view = object.__new__(TargetStack)
        view.intensity, view.depth, view.masks = self.intensity, self.depth, self.masks[l:l + 1]
        return view


def build_masks(depth, planes: int, near_is_high: bool = True) -> np.ndarray:
    """Quantise ``depth`` into ``planes`` equal-width bins, one boolean mask per plane.

    Plane 0 is the nearest (smallest distance). With ``near_is_high`` a depth
    of 1 maps to plane 0; otherwise a depth of 0 does.
    """
    if planes < 1:
        raise ValueError("need at least one depth plane")
    depth = np.asarray(depth, dtype=np.float64)
    if depth.size and (depth.min() < 0 or depth.max() > 1):
        raise ValueError("depth must lie in [0, 1]")
    b = np.clip(np.floor(depth * planes).astype(np.int64), 0, planes - 1)
    idx = planes - 1 - b if near_is_high else b
    return idx[None] == np.arange(planes)[:, None, None]


def _check(recon: np.ndarray, target: TargetStack) -> np.ndarray:
    recon = np.asarray(recon, dtype=np.float64)
    if recon.ndim != 4 or recon.shape[0] != target.planes or recon.shape[1:] != target.intensity.shape:
        raise ValueError(f"recon shape {recon.shape} does not match {target.planes} planes of "
                         f"{target.intensity.shape}")
    return recon


def loss_mse(recon, target: TargetStack, return_grad: bool = False):
    """Mean over planes of the per-plane mean squared intensity error."""
    recon = _check(recon, target)
    r = recon - target.intensity[None]
    value = float(np.mean(r * r))
    if not return_grad:
        return value
    return value, 2.0 * r / r.size


def loss_recon(recon, target: TargetStack, return_grad: bool = False):
    """Full-frame, depth-masked and target-weighted squared errors, averaged over planes."""
    recon = _check(recon, target)
    t = target.intensity[None]
    m = target.masks[:, None].astype(np.float64)
    r = recon - t
    w = 1.0 + m * m + t * t
    value = float(np.mean(r * r * w))
    if not return_grad:
        return value
    return value, 2.0 * r * w / r.size


def _gauss1d(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - size // 2
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(a: np.ndarray, g: np.ndarray) -> np.ndarray:
    a = sliding_window_view(a, g.size, axis=-1) @ g
    return np.swapaxes(sliding_window_view(np.swapaxes(a, -1, -2), g.size, axis=-1) @ g, -1, -2)


def _filter_adjoint(a: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = g.size - 1
    pad = [(0, 0)] * (a.ndim - 2) + [(k, k), (k, k)]
    return _filter_valid(np.pad(a, pad), g[::-1])


def ssim_map(x, y, data_range: float = 1.0) -> np.ndarray:
    """SSIM at every full window position of the trailing two axes."""
    return _ssim(np.asarray(x, np.float64), np.asarray(y, np.float64), data_range, False)[0]


def _ssim(x, y, data_range, want_grad):
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    if x.shape[-1] < SSIM_WINDOW or x.shape[-2] < SSIM_WINDOW:
        raise ValueError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW} for SSIM")
    g = _gauss1d()
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    exx, eyy, exy = _filter_valid(x * x, g), _filter_valid(y * y, g), _filter_valid(x * y, g)
    a1 = 2.0 * mx * my + c1
    a2 = 2.0 * (exy - mx * my) + c2
    b1 = mx * mx + my * my + c1
    b2 = (exx - mx * mx) + (eyy - my * my) + c2
    s = a1 * a2 / (b1 * b2)
    if not want_grad:
        return s, None
    # partials of the map w.r.t. the local statistics of x
    d_mx = (2.0 * my * a2 - 2.0 * my * a1) / (b1 * b2) - s * (2.0 * mx / b1 - 2.0 * mx / b2)
    d_exx = -s / b2
    d_exy = 2.0 * a1 / (b1 * b2)
    return s, (d_mx, d_exx, d_exy, g)


def loss_ssim(recon, target, return_grad: bool = False, data_range: float = 1.0):
    """``1 - mean SSIM`` over planes and channels (11x11 Gaussian window, sigma 1.5)."""
    t = target.intensity if isinstance(target, TargetStack) else np.asarray(target, np.float64)
    recon = np.asarray(recon, dtype=np.float64)
    if recon.ndim == 4:
        if recon.shape[1:] != t.shape:
            raise ValueError(f"recon shape {recon.shape} does not match target {t.shape}")
        y = np.broadcast_to(t[None], recon.shape)
    else:
        y = t
    s, parts = _ssim(recon, y, data_range, return_grad)
    value = float(1.0 - s.mean())
    if not return_grad:
        return value
    d_mx, d_exx, d_exy, g = parts
    scale = -1.0 / s.size
    grad = scale * (_filter_adjoint(d_mx, g) + 2.0 * recon * _filter_adjoint(d_exx, g)
                    + y * _filter_adjoint(d_exy, g))
    return value, grad


def training_loss(recon, target: TargetStack, return_grad: bool = False, ssim_weight: float = SSIM_WEIGHT):
    """``loss_recon + 0.005 * loss_ssim``."""
    if not return_grad:
        return loss_recon(recon, target) + ssim_weight * loss_ssim(recon, target)
    vr, gr = loss_recon(recon, target, True)
    vs, gs = loss_ssim(recon, target, True)
    return vr + ssim_weight * vs, gr + ssim_weight * gs
