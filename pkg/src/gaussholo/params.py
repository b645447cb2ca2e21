"""Complex-valued 2D Gaussian primitives: parameter storage, activations and
covariance algebra.

Parameters live in an unconstrained (pre-activation) space so that the
optimizer can move them freely; the activation maps below turn them into
physical quantities (pixel positions, pixel scales, opacities).
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

SCALE_EPS = 0.1  # added to exp(pre_scale)
COV_EPS = 0.1  # added to the covariance diagonal
DET_EPS = 1e-10  # lower clamp on det(cov) before inversion

PARAM_GROUPS = ("pre_position", "pre_scale", "rotation", "amplitude", "phase", "pre_opacity")


class CorruptParameterError(ValueError):
    """Raised when a parameter array contains NaN or Inf."""


def _check_finite(name: str, a: np.ndarray) -> None:
    if not np.all(np.isfinite(a)):
        raise CorruptParameterError(f"non-finite values in {name}")


@dataclass
class GaussianSet:
    """N complex-valued Gaussians with C colour channels, in pre-activation space.

    Arrays are float64 and shaped ``pre_position (N, 2)``, ``pre_scale (N, 2)``,
    ``rotation (N,)``, ``amplitude (N, C)``, ``phase (N, C)``,
    ``pre_opacity (N,)``. Field order matches the on-disk container.
    """

    pre_position: np.ndarray
    pre_scale: np.ndarray
    rotation: np.ndarray
    amplitude: np.ndarray
    phase: np.ndarray
    pre_opacity: np.ndarray

    def __post_init__(self):
        for f in fields(self):
            setattr(self, f.name, np.ascontiguousarray(getattr(self, f.name), dtype=np.float64))
        n = self.pre_position.shape[0]
        c = self.amplitude.shape[1] if self.amplitude.ndim == 2 else -1
        expected = {
            "pre_position": (n, 2),
            "pre_scale": (n, 2),
            "rotation": (n,),
            "amplitude": (n, c),
            "phase": (n, c),
            "pre_opacity": (n,),
        }
        if c < 1:
            raise ValueError("amplitude must be (N, C) with C >= 1")
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    @property
    def count(self) -> int:
        return self.pre_position.shape[0]

    @property
    def channels(self) -> int:
        return self.amplitude.shape[1]

    @property
    def num_scalars(self) -> int:
        """Trainable scalars: 6 shared plus amplitude and phase per channel."""
        return self.count * (6 + 2 * self.channels)

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_GROUPS}

    def copy(self) -> "GaussianSet":
        return GaussianSet(**{k: v.copy() for k, v in self.arrays().items()})

    def validate(self) -> None:
        for name, a in self.arrays().items():
            _check_finite(name, a)

    @classmethod
    def empty(cls, channels: int) -> "GaussianSet":
        z = np.zeros
        return cls(z((0, 2)), z((0, 2)), z(0), z((0, channels)), z((0, channels)), z(0))

    @classmethod
    def concat(cls, a: "GaussianSet", b: "GaussianSet") -> "GaussianSet":
        return cls(**{k: np.concatenate([a.arrays()[k], b.arrays()[k]]) for k in PARAM_GROUPS})


@dataclass
class ActivatedGaussians:
    """Physical parameters of a GaussianSet (vectorised over N)."""

    position: np.ndarray  # (N, 2) pixels, x in (0, W), y in (0, H)
    scale: np.ndarray  # (N, 2) pixels, >= SCALE_EPS
    rotation: np.ndarray  # (N,)
    amplitude: np.ndarray  # (N, C) in [0, 1]
    phase: np.ndarray  # (N, C)
    opacity: np.ndarray  # (N,) in (0, 1)


def activate_position(pre_position, width: float, height: float) -> np.ndarray:
    """Map unconstrained positions to pixel coordinates via ``(tanh + 1) / 2 * [W, H]``."""
    p = np.asarray(pre_position, dtype=np.float64)
    _check_finite("pre_position", p)
    if width <= 0 or height <= 0:
        raise ValueError("width and height must be positive")
    return (np.tanh(p) + 1.0) * 0.5 * np.array([width, height], dtype=np.float64)


def inverse_activate_position(position, width: float, height: float) -> np.ndarray:
    """Inverse of :func:`activate_position` (atanh mapping used at initialisation)."""
    dims = np.array([width, height], dtype=np.float64)
    return np.arctanh(2.0 * np.asarray(position, dtype=np.float64) / dims - 1.0)


def activate_scale(pre_scale) -> np.ndarray:
    s = np.asarray(pre_scale, dtype=np.float64)
    _check_finite("pre_scale", s)
    return np.exp(s) + SCALE_EPS


def activate_opacity(pre_opacity) -> np.ndarray:
    a = np.asarray(pre_opacity, dtype=np.float64)
    _check_finite("pre_opacity", a)
    # numerically stable logistic
    return np.where(a >= 0, 1.0 / (1.0 + np.exp(-np.abs(a))), np.exp(-np.abs(a)) / (1.0 + np.exp(-np.abs(a))))


def activate_amplitude(amplitude) -> np.ndarray:
    """Clamp amplitudes to [0, 1]; the backward pass zeroes gradients outside."""
    a = np.asarray(amplitude, dtype=np.float64)
    _check_finite("amplitude", a)
    return np.clip(a, 0.0, 1.0)


def activate(gs: GaussianSet, width: int, height: int) -> ActivatedGaussians:
    _check_finite("rotation", gs.rotation)
    _check_finite("phase", gs.phase)
    return ActivatedGaussians(
        position=activate_position(gs.pre_position, width, height),
        scale=activate_scale(gs.pre_scale),
        rotation=gs.rotation.copy(),
        amplitude=activate_amplitude(gs.amplitude),
        phase=gs.phase.copy(),
        opacity=activate_opacity(gs.pre_opacity),
    )


def covariance(scale, rotation) -> np.ndarray:
    """Expanded ``R S^2 R^T + eps_c I``.

    Returns an array ``(..., 3)`` holding ``(sxx, sxy, syy)``.
    """
    s = np.asarray(scale, dtype=np.float64)
    th = np.asarray(rotation, dtype=np.float64)
    sx2 = s[..., 0] ** 2
    sy2 = s[..., 1] ** 2
    c = np.cos(th)
    sn = np.sin(th)
    sxx = sx2 * c * c + sy2 * sn * sn + COV_EPS
    sxy = (sx2 - sy2) * c * sn
    syy = sx2 * sn * sn + sy2 * c * c + COV_EPS
    return np.stack([sxx, sxy, syy], axis=-1)


def invert_covariance(cov) -> tuple[np.ndarray, np.ndarray]:
    """Invert packed 2x2 covariances.

    Returns
    -------
    inv : ndarray (..., 3)
        ``(inv00, inv01, inv11)`` computed with ``det`` clamped below at 1e-10.
    radius : ndarray (...)
        Three-sigma bounding radius ``3 * sqrt(lambda_max(cov))``.
    """
    cov = np.asarray(cov, dtype=np.float64)
    a, b, c = cov[..., 0], cov[..., 1], cov[..., 2]
    det = np.maximum(a * c - b * b, DET_EPS)
    inv = np.stack([c / det, -b / det, a / det], axis=-1)
    return inv, 3.0 * np.sqrt(max_eigenvalue(cov))


def max_eigenvalue(cov) -> np.ndarray:
    cov = np.asarray(cov, dtype=np.float64)
    a, b, c = cov[..., 0], cov[..., 1], cov[..., 2]
    mid = 0.5 * (a + c)
    return mid + np.sqrt(np.maximum(0.25 * (a - c) ** 2 + b * b, 0.0))
