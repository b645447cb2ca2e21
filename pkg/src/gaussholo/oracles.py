"""Slow, independent reference implementations used to check the fast paths.

Nothing here imports the kernels it verifies: activations, covariance,
frequency grids and DFTs are written out again from their definitions.
Everything runs in float64 and is single-threaded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

MAX_DFT_DIM = 64


@dataclass(frozen=True)
class FiniteDiffSpec:
    h: float = 1e-4
    scheme: str = "central"

    def __post_init__(self):
        if self.h <= 0:
            raise ValueError("step h must be > 0")
        if self.scheme != "central":
            raise ValueError("only central differences are supported")


def _sigmoid(v: float) -> float:
    if v >= 0:
        return 1.0 / (1.0 + math.exp(-v))
    e = math.exp(v)
    return e / (1.0 + e)


def brute_rasterize(params: dict[str, np.ndarray], width: int, height: int, return_active: bool = False):
    """Sum every primitive at every pixel with the same clamps as the tiled kernel.

    ``params`` holds the six pre-activation arrays (a GaussianSet's
    ``arrays()``). The pixel loop is vectorised with numpy; the primitive
    loop is explicit. Returns a complex array ``(C, H, W)`` and, optionally,
    a boolean ``(N, H, W)`` mask of contributions that passed the cutoff.
    """
    pos = np.asarray(params["pre_position"], dtype=np.float64)
    psc = np.asarray(params["pre_scale"], dtype=np.float64)
    rot = np.asarray(params["rotation"], dtype=np.float64)
    amp = np.asarray(params["amplitude"], dtype=np.float64)
    phs = np.asarray(params["phase"], dtype=np.float64)
    pop = np.asarray(params["pre_opacity"], dtype=np.float64)
    n, ch = amp.shape
    out = np.zeros((ch, height, width), dtype=np.complex128)
    active = np.zeros((n, height, width), dtype=bool)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    for g in range(n):
        mx = (math.tanh(pos[g, 0]) + 1.0) / 2.0 * width
        my = (math.tanh(pos[g, 1]) + 1.0) / 2.0 * height
        sx = math.exp(psc[g, 0]) + 0.1
        sy = math.exp(psc[g, 1]) + 0.1
        R = np.array([[math.cos(rot[g]), -math.sin(rot[g])], [math.sin(rot[g]), math.cos(rot[g])]])
        cov = R @ np.diag([sx * sx, sy * sy]) @ R.T + 0.1 * np.eye(2)
        det = max(cov[0, 0] * cov[1, 1] - cov[0, 1] * cov[1, 0], 1e-10)
        i00, i01, i11 = cov[1, 1] / det, -cov[0, 1] / det, cov[0, 0] / det
        dx = xx - mx
        dy = yy - my
        power = np.maximum(-0.5 * (i00 * dx * dx + 2.0 * i01 * dx * dy + i11 * dy * dy), -50.0)
        a_eff = np.minimum(0.99, _sigmoid(pop[g]) * np.exp(power))
        keep = a_eff >= 1.0 / 255.0
        active[g] = keep
        a_eff = np.where(keep, a_eff, 0.0)
        for c in range(ch):
            cval = min(max(amp[g, c], 0.0), 1.0)
            out[c] += cval * a_eff * complex(math.cos(phs[g, c]), math.sin(phs[g, c]))
    if return_active:
        return out, active
    return out


def _dft_matrix(n: int, inverse: bool) -> np.ndarray:
    # centred indices: output/input index k maps to frequency k - n//2 after shift
    k = np.arange(n)
    sign = 1.0 if inverse else -1.0
    return np.exp(sign * 2j * np.pi * np.outer(k, k) / n)


def direct_dft_propagate(u: np.ndarray, wavelengths, pitch: float, distance: float,
                         pad_factor: int = 2, aperture_radius: float = 0.0) -> np.ndarray:
    """Band-limited angular spectrum propagation with explicit DFT sums.

    ``u`` is ``(C, H, W)`` complex; dims are limited to 64 x 64. The DFT is
    evaluated as a direct double sum (separable matrix products over the
    padded grid) and the transfer function is built pixel by pixel.
    """
    u = np.asarray(u, dtype=np.complex128)
    c, h, w = u.shape
    if h > MAX_DFT_DIM or w > MAX_DFT_DIM:
        raise ValueError(f"direct DFT oracle is limited to {MAX_DFT_DIM}x{MAX_DFT_DIM}")
    if len(wavelengths) != c:
        raise ValueError("one wavelength per channel required")
    ny, nx = h * pad_factor, w * pad_factor
    oy, ox = (ny - h) // 2, (nx - w) // 2
    fwd_y, fwd_x = _dft_matrix(ny, False), _dft_matrix(nx, False)
    inv_y, inv_x = _dft_matrix(ny, True), _dft_matrix(nx, True)
    out = np.empty_like(u)
    for ch in range(c):
        lam = wavelengths[ch]
        k = 2.0 * math.pi / lam
        lx, ly = nx * pitch, ny * pitch
        fxmax = 1.0 / (lam * math.sqrt((2.0 * abs(distance) / lx) ** 2 + 1.0))
        fymax = 1.0 / (lam * math.sqrt((2.0 * abs(distance) / ly) ** 2 + 1.0))
        padded = np.zeros((ny, nx), dtype=np.complex128)
        padded[oy:oy + h, ox:ox + w] = u[ch]
        spec = fwd_y @ padded @ fwd_x.T  # unshifted spectrum, index q <-> frequency q (mod n)
        Hgrid = np.zeros((ny, nx), dtype=np.complex128)
        for qy in range(ny):
            iy = (qy + ny // 2) % ny  # centred index of this unshifted bin
            fy = (iy - ny // 2) / ly
            for qx in range(nx):
                ix = (qx + nx // 2) % nx
                fx = (ix - nx // 2) / lx
                if abs(fx) >= fxmax or abs(fy) >= fymax:
                    continue
                if aperture_radius > 0:
                    ax = ix - nx / 2 + 0.5
                    ay = iy - ny / 2 + 0.5
                    if ax * ax + ay * ay >= aperture_radius**2:
                        continue
                kz2 = k * k - (2.0 * math.pi) ** 2 * (fx * fx + fy * fy)
                kz = math.sqrt(kz2) if kz2 > 0 else 0.0
                Hgrid[qy, qx] = complex(math.cos(kz * distance), math.sin(kz * distance))
        back = inv_y @ (spec * Hgrid) @ inv_x.T / (nx * ny)
        out[ch] = back[oy:oy + h, ox:ox + w]
    return out


def finite_diff_grad(f, x, spec: FiniteDiffSpec = FiniteDiffSpec()) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x`` (any shape)."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + spec.h
        fp = f(x.copy())
        flat[i] = orig - spec.h
        fm = f(x.copy())
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * spec.h)
    return g


def loop_mse(recon: np.ndarray, target: np.ndarray) -> float:
    L, C, H, W = recon.shape
    total = 0.0
    for l in range(L):
        s = 0.0
        for c in range(C):
            for i in range(H):
                for j in range(W):
                    d = float(recon[l, c, i, j]) - float(target[c, i, j])
                    s += d * d
        total += s / (C * H * W)
    return total / L


def loop_recon(recon: np.ndarray, target: np.ndarray, masks: np.ndarray) -> float:
    L, C, H, W = recon.shape
    total = 0.0
    for l in range(L):
        a = b = e = 0.0
        for c in range(C):
            for i in range(H):
                for j in range(W):
                    I = float(recon[l, c, i, j])
                    T = float(target[c, i, j])
                    m = 1.0 if masks[l, i, j] else 0.0
                    a += (I - T) ** 2
                    b += (I * m - T * m) ** 2
                    e += (I * T - T * T) ** 2
        total += (a + b + e) / (C * H * W)
    return total / L


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = size // 2
    w = [[math.exp(-((i - r) ** 2 + (j - r) ** 2) / (2.0 * sigma * sigma)) for j in range(size)] for i in range(size)]
    w = np.array(w)
    return w / w.sum()


def sliding_ssim(x: np.ndarray, y: np.ndarray, data_range: float = 1.0, size: int = 11, sigma: float = 1.5) -> float:
    """Mean SSIM over every full 11x11 window position of two 2-D images."""
    win = gaussian_window(size, sigma)
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    h, w = x.shape
    vals = []
    for i in range(h - size + 1):
        for j in range(w - size + 1):
            px = x[i:i + size, j:j + size]
            py = y[i:i + size, j:j + size]
            mx = float((win * px).sum())
            my = float((win * py).sum())
            vx = float((win * px * px).sum()) - mx * mx
            vy = float((win * py * py).sum()) - my * my
            cxy = float((win * px * py).sum()) - mx * my
            vals.append(((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2)))
    return float(np.mean(vals))


def loop_psnr(recon: np.ndarray, target: np.ndarray) -> float:
    s = 0.0
    n = 0
    for a, b in zip(np.ravel(recon), np.ravel(target)):
        a = min(max(float(a), 0.0), 1.0)
        b = min(max(float(b), 0.0), 1.0)
        s += (a - b) ** 2
        n += 1
    mse = s / n
    return math.inf if mse == 0 else 10.0 * math.log10(1.0 / mse)
