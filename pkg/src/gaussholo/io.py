"""Binary containers for fields and Gaussian sets, and PNG import/export.

Field container (little-endian)::

    b"CGHF" | version u16 | C u32 | H u32 | W u32 | dtype u8 (4 = f32, 8 = f64)
    | real planes (C*H*W) | imag planes (C*H*W)

Gaussian container (little-endian, f32 payload)::

    b"CGGS" | version u16 | N u32 | C u32
    | pre_position (N*2) | pre_scale (N*2) | rotation (N) | amplitude (N*C)
    | phase (N*C) | pre_opacity (N)

All writes go to a temporary file in the destination directory that is then
renamed over the target.
"""

from __future__ import annotations

import io as _io
import os
import struct
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from .field import ComplexField
from .params import PARAM_GROUPS, GaussianSet

FIELD_MAGIC = b"CGHF"
GAUSS_MAGIC = b"CGGS"
FORMAT_VERSION = 1
_DTYPES = {4: np.dtype("<f4"), 8: np.dtype("<f8")}

TWO_PI = 2.0 * np.pi


class ContainerError(ValueError):
    """Bad magic, unsupported version or truncated payload."""


def _umask() -> int:
    mask = os.umask(0)
    os.umask(mask)
    return mask


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.chmod(tmp, 0o666 & ~_umask())  # mkstemp creates 0600
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def field_to_bytes(field: ComplexField, dtype: str = "f64") -> bytes:
    width = {"f32": 4, "f64": 8}[dtype]
    dt = _DTYPES[width]
    c, h, w = field.shape
    head = FIELD_MAGIC + struct.pack("<HIIIB", FORMAT_VERSION, c, h, w, width)
    return head + field.real.astype(dt).tobytes() + field.imag.astype(dt).tobytes()


def field_from_bytes(data: bytes) -> ComplexField:
    head = struct.calcsize("<HIIIB")
    if data[:4] != FIELD_MAGIC:
        raise ContainerError("not a field container (bad magic)")
    if len(data) < 4 + head:
        raise ContainerError("truncated field header")
    version, c, h, w, width = struct.unpack("<HIIIB", data[4:4 + head])
    if version != FORMAT_VERSION:
        raise ContainerError(f"unsupported field container version {version}")
    if width not in _DTYPES:
        raise ContainerError(f"unknown dtype tag {width}")
    n = c * h * w
    body = data[4 + head:]
    if len(body) != 2 * n * width:
        raise ContainerError(f"field payload has {len(body)} bytes, expected {2 * n * width}")
    arr = np.frombuffer(body, dtype=_DTYPES[width])
    real = arr[:n].reshape(c, h, w).astype(np.float64)
    imag = arr[n:].reshape(c, h, w).astype(np.float64)
    return ComplexField(real, imag)


def save_field(path, field: ComplexField, dtype: str = "f64") -> None:
    atomic_write_bytes(path, field_to_bytes(field, dtype))


def load_field(path) -> ComplexField:
    return field_from_bytes(Path(path).read_bytes())


def gaussians_to_bytes(gs: GaussianSet) -> bytes:
    head = GAUSS_MAGIC + struct.pack("<HII", FORMAT_VERSION, gs.count, gs.channels)
    return head + b"".join(getattr(gs, k).astype("<f4").tobytes() for k in PARAM_GROUPS)


def gaussians_from_bytes(data: bytes) -> GaussianSet:
    head = struct.calcsize("<HII")
    if data[:4] != GAUSS_MAGIC:
        raise ContainerError("not a gaussian container (bad magic)")
    if len(data) < 4 + head:
        raise ContainerError("truncated gaussian header")
    version, n, c = struct.unpack("<HII", data[4:4 + head])
    if version != FORMAT_VERSION:
        raise ContainerError(f"unsupported gaussian container version {version}")
    shapes = [(n, 2), (n, 2), (n,), (n, c), (n, c), (n,)]
    sizes = [int(np.prod(s)) for s in shapes]
    body = data[4 + head:]
    if len(body) != 4 * sum(sizes):
        raise ContainerError(f"gaussian payload has {len(body)} bytes, expected {4 * sum(sizes)}")
    flat = np.frombuffer(body, dtype="<f4").astype(np.float64)
    out, off = {}, 0
    for name, shape, size in zip(PARAM_GROUPS, shapes, sizes):
        out[name] = flat[off:off + size].reshape(shape)
        off += size
    return GaussianSet(**out)


def save_gaussians(path, gs: GaussianSet) -> None:
    atomic_write_bytes(path, gaussians_to_bytes(gs))


def load_gaussians(path) -> GaussianSet:
    return gaussians_from_bytes(Path(path).read_bytes())


def srgb_to_linear(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return np.where(v <= 0.04045, v / 12.92, ((v + 0.055) / 1.055) ** 2.4)


def linear_to_srgb(v: np.ndarray) -> np.ndarray:
    v = np.clip(np.asarray(v, dtype=np.float64), 0.0, 1.0)
    return np.where(v <= 0.0031308, v * 12.92, 1.055 * v ** (1.0 / 2.4) - 0.055)


def load_image(path, channels: int | None = None) -> np.ndarray:
    """Read an 8-bit PNG into linear intensity ``(C, H, W)`` in [0, 1]."""
    img = Image.open(path)
    if channels == 1:
        img = img.convert("L")
    elif channels == 3 or img.mode not in ("L", "RGB"):
        img = img.convert("RGB")
    a = np.asarray(img, dtype=np.float64) / 255.0
    a = a[None] if a.ndim == 2 else np.moveaxis(a, -1, 0)
    return srgb_to_linear(a)


def save_image(path, intensity: np.ndarray) -> None:
    """Write linear intensity ``(C, H, W)`` (C in {1, 3}) as an sRGB 8-bit PNG."""
    a = np.round(linear_to_srgb(intensity) * 255.0).astype(np.uint8)
    img = Image.fromarray(a[0]) if a.shape[0] == 1 else Image.fromarray(np.moveaxis(a, 0, -1))
    _save_png(path, img)


def load_depth(path) -> np.ndarray:
    """Read an 8- or 16-bit grayscale PNG normalised to [0, 1]."""
    img = Image.open(path)
    a = np.asarray(img)
    if a.ndim == 3:
        a = np.asarray(img.convert("L"))
    if a.dtype == np.uint8:
        return a.astype(np.float64) / 255.0
    if img.mode.startswith("I"):
        return np.clip(a.astype(np.float64) / 65535.0, 0.0, 1.0)
    raise ValueError(f"unsupported depth image mode {img.mode}")


def save_depth16(path, depth: np.ndarray) -> None:
    a = np.round(np.clip(depth, 0.0, 1.0) * 65535.0).astype(np.uint16)
    _save_png(path, Image.fromarray(a))


def quantize_phase(phase: np.ndarray) -> np.ndarray:
    """Map phases in [0, 2pi) to 256 levels (nearest, wrapping 2pi to 0)."""
    return (np.round(np.asarray(phase) / TWO_PI * 256.0).astype(np.int64) % 256).astype(np.uint8)


def dequantize_phase(levels: np.ndarray) -> np.ndarray:
    return np.asarray(levels, dtype=np.float64) * TWO_PI / 256.0


def save_phase_png(path, phase: np.ndarray) -> None:
    """One 8-bit PNG per hologram; channels go side by side for C > 1."""
    q = quantize_phase(phase)
    img = q[0] if q.shape[0] == 1 else np.concatenate(list(q), axis=1)
    _save_png(path, Image.fromarray(img))


def load_phase_png(path, channels: int = 1) -> np.ndarray:
    a = np.asarray(Image.open(path))
    return dequantize_phase(np.stack(np.split(a, channels, axis=1)))


def _save_png(path, img: Image.Image) -> None:
    buf = _io.BytesIO()
    img.save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())
