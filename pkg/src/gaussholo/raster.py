"""Tile-based rasterization of complex Gaussians and its analytic backward pass.

The hologram is a plain complex sum over primitives (no alpha compositing).
Each pixel accumulates ``c * min(0.99, alpha * G) * exp(j * phi)`` over the
Gaussians listed for its 16x16 tile, in ascending Gaussian id, so that a
single-threaded run is bit-reproducible. The backward pass recomputes
``G`` from parameters and writes one gradient slot per (tile, gaussian) pair;
the slots are reduced serially in key order, which makes the gradients
independent of the thread count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from . import _threads  # noqa: F401  # picks the threading layer before compiling

from .field import ComplexField
from .params import (
    GaussianSet,
    activate,
    covariance,
    invert_covariance,
    DET_EPS,
)

TILE_SIZE = 16
POWER_FLOOR = -50.0
ALPHA_MAX = 0.99
ALPHA_MIN = 1.0 / 255.0


@dataclass
class TileIndex:
    """Sorted (tile, gaussian) pairs and per-tile ranges into them."""

    tile_size: int
    tiles_x: int
    tiles_y: int
    tile_ids: np.ndarray  # (P,) int64, nondecreasing
    gauss_ids: np.ndarray  # (P,) int64, ascending within each tile
    ranges: np.ndarray  # (tiles_x * tiles_y, 2) int64 [start, end)

    @property
    def num_pairs(self) -> int:
        return int(self.tile_ids.shape[0])


@dataclass
class RasterGradients:
    """Gradients of a scalar loss with respect to every parameter group."""

    pre_position: np.ndarray
    pre_scale: np.ndarray
    rotation: np.ndarray
    amplitude: np.ndarray
    phase: np.ndarray
    pre_opacity: np.ndarray

    def as_dict(self) -> dict[str, np.ndarray]:
        return dict(self.__dict__)


@dataclass
class _Prepared:
    position: np.ndarray
    inv: np.ndarray
    det_clamped: np.ndarray
    cov: np.ndarray
    opacity: np.ndarray
    amplitude: np.ndarray
    cos_phi: np.ndarray
    sin_phi: np.ndarray
    radius: np.ndarray
    extent: np.ndarray
    power_cut: np.ndarray
    scale: np.ndarray


def cull_extent(cov: np.ndarray, opacity: np.ndarray) -> np.ndarray:
    """Half-widths ``(N, 2)`` of the axis-aligned box outside which a Gaussian is culled.

    The box encloses the larger of the 3-sigma ellipse and the ellipse where
    ``alpha * G`` falls to the 1/255 cutoff, so tiled rendering drops nothing
    the brute-force sum would keep. Gaussians with ``alpha <= 1/255`` can
    never contribute and get extent -1.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        m = np.maximum(2.0 * np.log(255.0 * opacity), 9.0)
    ext = np.sqrt(m[:, None] * cov[:, [0, 2]])
    ext = ext * (1.0 + 1e-9) + 1e-9
    return np.where((255.0 * opacity > 1.0)[:, None], ext, -1.0)


def _prepare(gs: GaussianSet, width: int, height: int) -> _Prepared:
    act = activate(gs, width, height)
    cov = covariance(act.scale, act.rotation)
    inv, radius = invert_covariance(cov)
    det = cov[:, 0] * cov[:, 2] - cov[:, 1] ** 2
    with np.errstate(divide="ignore"):
        # below this exponent alpha * G is certainly under the cutoff
        power_cut = -np.log(255.0 * act.opacity) - 1e-9
    return _Prepared(
        position=np.ascontiguousarray(act.position),
        inv=np.ascontiguousarray(inv),
        det_clamped=det <= DET_EPS,
        cov=cov,
        opacity=np.ascontiguousarray(act.opacity),
        amplitude=np.ascontiguousarray(act.amplitude),
        cos_phi=np.ascontiguousarray(np.cos(act.phase)),
        sin_phi=np.ascontiguousarray(np.sin(act.phase)),
        radius=radius,
        extent=np.ascontiguousarray(cull_extent(cov, act.opacity)),
        power_cut=np.ascontiguousarray(power_cut),
        scale=act.scale,
    )


@numba.njit(cache=True)
def _tile_pairs(position, extent, width, height, tile_size, tiles_x, tiles_y):
    n = position.shape[0]
    bounds = np.empty((n, 4), dtype=np.int64)
    counts = np.zeros(n, dtype=np.int64)
    for g in range(n):
        ex = extent[g, 0]
        ey = extent[g, 1]
        x = position[g, 0]
        y = position[g, 1]
        if ex < 0 or x + ex < 0 or y + ey < 0 or x - ex > width - 1 or y - ey > height - 1:
            continue
        tx0 = max(int(np.floor((x - ex) / tile_size)), 0)
        tx1 = min(int(np.floor((x + ex) / tile_size)), tiles_x - 1)
        ty0 = max(int(np.floor((y - ey) / tile_size)), 0)
        ty1 = min(int(np.floor((y + ey) / tile_size)), tiles_y - 1)
        bounds[g, 0] = tx0
        bounds[g, 1] = tx1
        bounds[g, 2] = ty0
        bounds[g, 3] = ty1
        counts[g] = (tx1 - tx0 + 1) * (ty1 - ty0 + 1)
    total = counts.sum()
    tile_ids = np.empty(total, dtype=np.int64)
    gauss_ids = np.empty(total, dtype=np.int64)
    k = 0
    for g in range(n):
        if counts[g] == 0:
            continue
        for ty in range(bounds[g, 2], bounds[g, 3] + 1):
            for tx in range(bounds[g, 0], bounds[g, 1] + 1):
                tile_ids[k] = ty * tiles_x + tx
                gauss_ids[k] = g
                k += 1
    return tile_ids, gauss_ids


def _index_from_prepared(prep: _Prepared, width: int, height: int) -> TileIndex:
    tiles_x = -(-width // TILE_SIZE)
    tiles_y = -(-height // TILE_SIZE)
    tile_ids, gauss_ids = _tile_pairs(
        prep.position, prep.extent, width, height, TILE_SIZE, tiles_x, tiles_y
    )
    # keys are generated in ascending gaussian id; a stable sort by tile keeps that order
    order = np.argsort(tile_ids, kind="stable")
    tile_ids = tile_ids[order]
    gauss_ids = gauss_ids[order]
    t = np.arange(tiles_x * tiles_y)
    ranges = np.stack(
        [np.searchsorted(tile_ids, t, side="left"), np.searchsorted(tile_ids, t, side="right")], axis=1
    ).astype(np.int64)
    return TileIndex(TILE_SIZE, tiles_x, tiles_y, tile_ids, gauss_ids, ranges)


def build_tile_index(gs: GaussianSet, width: int, height: int) -> TileIndex:
    _check_dims(width, height)
    return _index_from_prepared(_prepare(gs, width, height), width, height)


@numba.njit(inline="always")
def _span(center, ext, lo, hi):
    # integer pixel range [a, b] within [lo, hi) covered by center +- ext
    a = max(lo, int(np.ceil(center - ext)))
    b = min(hi - 1, int(np.floor(center + ext)))
    return a, b


@numba.njit(parallel=True, cache=True)
def _forward_kernel(position, inv, opacity, amplitude, cos_phi, sin_phi, extent, power_cut, gauss_ids, ranges,
                    tiles_x, tile_size, width, height, out_re, out_im):
    n_tiles = ranges.shape[0]
    channels = amplitude.shape[1]
    for t in numba.prange(n_tiles):
        x_lo = (t % tiles_x) * tile_size
        y_lo = (t // tiles_x) * tile_size
        x_hi = min(x_lo + tile_size, width)
        y_hi = min(y_lo + tile_size, height)
        buf_re = np.zeros((channels, tile_size, tile_size))
        buf_im = np.zeros((channels, tile_size, tile_size))
        # gaussian-outer; each pixel still sums its contributions in ascending id
        for k in range(ranges[t, 0], ranges[t, 1]):
            g = gauss_ids[k]
            gx = position[g, 0]
            gy = position[g, 1]
            i00 = inv[g, 0]
            i01 = inv[g, 1]
            i11 = inv[g, 2]
            op = opacity[g]
            pc = power_cut[g]
            xa, xb = _span(gx, extent[g, 0], x_lo, x_hi)
            ya, yb = _span(gy, extent[g, 1], y_lo, y_hi)
            for py in range(ya, yb + 1):
                dy = py - gy
                for px in range(xa, xb + 1):
                    dx = px - gx
                    power = -0.5 * (dx * dx * i00 + 2.0 * dx * dy * i01 + dy * dy * i11)
                    if power < pc:
                        continue
                    a_eff = min(0.99, op * np.exp(max(power, -50.0)))
                    if a_eff < 1.0 / 255.0:
                        continue
                    for c in range(channels):
                        s = amplitude[g, c] * a_eff
                        buf_re[c, py - y_lo, px - x_lo] += s * cos_phi[g, c]
                        buf_im[c, py - y_lo, px - x_lo] += s * sin_phi[g, c]
        for c in range(channels):
            for py in range(y_lo, y_hi):
                for px in range(x_lo, x_hi):
                    out_re[c, py, px] = buf_re[c, py - y_lo, px - x_lo]
                    out_im[c, py, px] = buf_im[c, py - y_lo, px - x_lo]


@numba.njit(parallel=True, cache=True)
def _backward_kernel(position, inv, opacity, amplitude, cos_phi, sin_phi, extent, power_cut, gauss_ids, ranges,
                     tiles_x, tile_size, width, height, grad_re, grad_im, slots):
    # slots columns: [d/dx, d/dy, d/dinv00, d/dinv01, d/dinv11, d/dalpha, d/dc (C), d/dphi (C)]
    n_tiles = ranges.shape[0]
    channels = amplitude.shape[1]
    for t in numba.prange(n_tiles):
        x_lo = (t % tiles_x) * tile_size
        y_lo = (t // tiles_x) * tile_size
        x_hi = min(x_lo + tile_size, width)
        y_hi = min(y_lo + tile_size, height)
        acc = np.zeros(slots.shape[1])
        for k in range(ranges[t, 0], ranges[t, 1]):
            g = gauss_ids[k]
            gx = position[g, 0]
            gy = position[g, 1]
            i00 = inv[g, 0]
            i01 = inv[g, 1]
            i11 = inv[g, 2]
            op = opacity[g]
            pc = power_cut[g]
            acc[:] = 0.0
            xa, xb = _span(gx, extent[g, 0], x_lo, x_hi)
            ya, yb = _span(gy, extent[g, 1], y_lo, y_hi)
            for py in range(ya, yb + 1):
                dy = py - gy
                for px in range(xa, xb + 1):
                    dx = px - gx
                    power = -0.5 * (dx * dx * i00 + 2.0 * dx * dy * i01 + dy * dy * i11)
                    if power < pc:
                        continue
                    gval = np.exp(max(power, -50.0))
                    ag = op * gval
                    a_eff = min(0.99, ag)
                    if a_eff < 1.0 / 255.0:
                        continue
                    d_aeff = 0.0
                    for c in range(channels):
                        gr = grad_re[c, py, px]
                        gi = grad_im[c, py, px]
                        proj = cos_phi[g, c] * gr + sin_phi[g, c] * gi
                        acc[6 + c] += a_eff * proj
                        acc[6 + channels + c] += amplitude[g, c] * a_eff * (-sin_phi[g, c] * gr + cos_phi[g, c] * gi)
                        d_aeff += amplitude[g, c] * proj
                    # saturated alpha_eff passes no gradient to opacity or shape
                    if ag >= 0.99:
                        continue
                    acc[5] += d_aeff * gval
                    if power <= -50.0:
                        continue
                    d_power = d_aeff * ag
                    acc[0] += d_power * (dx * i00 + dy * i01)
                    acc[1] += d_power * (dx * i01 + dy * i11)
                    acc[2] += d_power * (-0.5 * dx * dx)
                    acc[3] += d_power * (-dx * dy)
                    acc[4] += d_power * (-0.5 * dy * dy)
            for j in range(acc.shape[0]):
                slots[k, j] = acc[j]


@numba.njit(cache=True)
def _reduce_slots(slots, gauss_ids, n):
    out = np.zeros((n, slots.shape[1]))
    for k in range(slots.shape[0]):
        g = gauss_ids[k]
        for j in range(slots.shape[1]):
            out[g, j] += slots[k, j]
    return out


def _check_dims(width: int, height: int) -> None:
    if width <= 0 or height <= 0:
        raise ValueError(f"image size must be positive, got {width}x{height}")


def rasterize_forward(gs: GaussianSet, width: int, height: int, index: TileIndex | None = None) -> ComplexField:
    """Render ``gs`` into a C x H x W complex field."""
    _check_dims(width, height)
    out = ComplexField.zeros(gs.channels, height, width)
    if gs.count == 0:
        return out
    prep = _prepare(gs, width, height)
    if index is None:
        index = _index_from_prepared(prep, width, height)
    _forward_kernel(prep.position, prep.inv, prep.opacity, prep.amplitude, prep.cos_phi, prep.sin_phi,
                    prep.extent, prep.power_cut, index.gauss_ids, index.ranges, index.tiles_x, index.tile_size, width, height,
                    out.real, out.imag)
    return out


def rasterize_backward(gs: GaussianSet, grad_real: np.ndarray, grad_imag: np.ndarray,
                       index: TileIndex | None = None) -> RasterGradients:
    """Gradients of a loss w.r.t. all parameters given dL/dRe and dL/dIm of the field."""
    grad_real = np.ascontiguousarray(grad_real, dtype=np.float64)
    grad_imag = np.ascontiguousarray(grad_imag, dtype=np.float64)
    if grad_real.shape != grad_imag.shape or grad_real.ndim != 3 or grad_real.shape[0] != gs.channels:
        raise ValueError(f"upstream gradient shapes {grad_real.shape}/{grad_imag.shape} "
                         f"do not match a {gs.channels}-channel field")
    _, height, width = grad_real.shape
    n, ch = gs.count, gs.channels
    if n == 0:
        return RasterGradients(*(np.zeros_like(a) for a in gs.arrays().values()))
    prep = _prepare(gs, width, height)
    if index is None:
        index = _index_from_prepared(prep, width, height)
    slots = np.zeros((index.num_pairs, 6 + 2 * ch))
    _backward_kernel(prep.position, prep.inv, prep.opacity, prep.amplitude, prep.cos_phi, prep.sin_phi,
                     prep.extent, prep.power_cut, index.gauss_ids, index.ranges, index.tiles_x, index.tile_size, width, height,
                     grad_real, grad_imag, slots)
    acc = _reduce_slots(slots, index.gauss_ids, n)

    d_mean = acc[:, 0:2]
    d_inv = acc[:, 2:5]
    d_alpha = acc[:, 5]
    d_amp = acc[:, 6:6 + ch]
    d_phase = acc[:, 6 + ch:]

    # position: tanh activation
    t = np.tanh(gs.pre_position)
    d_pre_pos = d_mean * np.array([width, height]) * 0.5 * (1.0 - t * t)

    # inverse covariance -> covariance (det held constant where clamped)
    a, b, c = prep.cov[:, 0], prep.cov[:, 1], prep.cov[:, 2]
    det = np.maximum(a * c - b * b, DET_EPS)
    live = ~prep.det_clamped
    g00, g01, g11 = d_inv[:, 0], d_inv[:, 1], d_inv[:, 2]
    inv00, inv01, inv11 = c / det, -b / det, a / det
    # d(inv)/d(det) contribution: inv_ij = adj_ij / det
    d_det = np.where(live, -(g00 * inv00 + g01 * inv01 + g11 * inv11) / det, 0.0)
    d_a = g11 / det + d_det * c
    d_b = -g01 / det + d_det * (-2.0 * b)
    d_c = g00 / det + d_det * a

    sx, sy = prep.scale[:, 0], prep.scale[:, 1]
    th = gs.rotation
    cs, sn = np.cos(th), np.sin(th)
    d_sx = 2.0 * sx * (cs * cs * d_a + cs * sn * d_b + sn * sn * d_c)
    d_sy = 2.0 * sy * (sn * sn * d_a - cs * sn * d_b + cs * cs * d_c)
    d_pre_scale = np.stack([d_sx, d_sy], axis=1) * np.exp(gs.pre_scale)
    sx2, sy2 = sx * sx, sy * sy
    d_rot = (2.0 * (sy2 - sx2) * cs * sn * d_a
             + (sx2 - sy2) * (cs * cs - sn * sn) * d_b
             + 2.0 * (sx2 - sy2) * cs * sn * d_c)

    alpha = prep.opacity
    d_pre_opacity = d_alpha * alpha * (1.0 - alpha)
    inside = (gs.amplitude >= 0.0) & (gs.amplitude <= 1.0)
    d_amp = np.where(inside, d_amp, 0.0)

    return RasterGradients(
        pre_position=d_pre_pos,
        pre_scale=d_pre_scale,
        rotation=d_rot,
        amplitude=d_amp,
        phase=d_phase,
        pre_opacity=d_pre_opacity,
    )
