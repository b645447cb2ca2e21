from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class ComplexField:
    """A C x H x W complex raster stored as separate real and imaginary planes."""

    real: np.ndarray
    imag: np.ndarray

    def __post_init__(self):
        if self.real.shape != self.imag.shape:
            raise ValueError(f"real {self.real.shape} and imag {self.imag.shape} differ")
        if self.real.ndim != 3:
            raise ValueError("field planes must be C x H x W")

    @classmethod
    def from_complex(cls, u: np.ndarray) -> "ComplexField":
        u = np.asarray(u)
        if u.ndim == 2:
            u = u[None]
        return cls(np.ascontiguousarray(u.real, dtype=np.float64), np.ascontiguousarray(u.imag, dtype=np.float64))

    @classmethod
    def zeros(cls, channels: int, height: int, width: int) -> "ComplexField":
        shape = (channels, height, width)
        return cls(np.zeros(shape), np.zeros(shape))

    def to_complex(self) -> np.ndarray:
        return self.real + 1j * self.imag

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.real.shape

    @property
    def channels(self) -> int:
        return self.real.shape[0]

    @property
    def height(self) -> int:
        return self.real.shape[1]

    @property
    def width(self) -> int:
        return self.real.shape[2]

    def intensity(self) -> np.ndarray:
        return self.real**2 + self.imag**2

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.real)) and np.all(np.isfinite(self.imag)))
