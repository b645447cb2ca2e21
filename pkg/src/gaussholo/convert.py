"""Conversion of a complex Gaussian hologram into phase-only holograms.

Two formats are produced: a smooth POH by checkerboard double-phase
amplitude coding, and a random POH whose phase is optimised while being
pulled towards the (frozen) Gaussian hologram's propagated fields.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .field import ComplexField
from .loss import DepthPlaneSet, TargetStack, loss_recon
from .optim import Adan
from .params import GaussianSet
from .propagation import PropagationSpec, propagate_array, propagate_backward_array
from .raster import rasterize_forward

log = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi
LAMBDA_COMP = 0.1
LAMBDA_FIELD = 0.01
PHASE_LR = 2.5e-3


@dataclass
class PhaseOnlyHologram:
    phase: np.ndarray  # (C, H, W) in [0, 2pi)
    kind: str  # "smooth" | "random"

    def __post_init__(self):
        if self.kind not in ("smooth", "random"):
            raise ValueError(f"unknown hologram kind {self.kind!r}")
        self.phase = canonicalize_phase(self.phase)

    def field(self) -> ComplexField:
        return ComplexField(np.cos(self.phase), np.sin(self.phase))


def canonicalize_phase(phase) -> np.ndarray:
    """Wrap phases into [0, 2pi)."""
    p = np.asarray(phase, dtype=np.float64)
    if not np.all(np.isfinite(p)):
        raise ValueError("phase must be finite")
    r = np.mod(p, TWO_PI)
    # mod of a tiny negative number rounds up to exactly 2pi
    return np.where(r >= TWO_PI, r - TWO_PI, r)


def checkerboard(height: int, width: int) -> np.ndarray:
    """True where ``(i + j) % 2 == 0`` (the amplitude-carrying cells)."""
    i, j = np.indices((height, width))
    return (i + j) % 2 == 0


def dpac_encode(field: ComplexField, classical: bool = False) -> PhaseOnlyHologram:
    """Checkerboard double-phase amplitude coding.

    The amplitude is normalised by its per-channel maximum. By default the
    even cells carry that amplitude value directly as a phase and the odd
    cells carry the field's phase. With ``classical=True`` the cells carry
    ``phi + acos(A)`` and ``phi - acos(A)`` instead.
    """
    u = field.to_complex()
    if not np.all(np.isfinite(u)):
        raise ValueError("field must be finite")
    amp = np.hypot(u.real, u.imag)
    peak = amp.max(axis=(1, 2), keepdims=True)
    amp = np.divide(amp, peak, out=np.zeros_like(amp), where=peak > 0)
    phi = np.arctan2(u.imag, u.real)
    even = checkerboard(field.height, field.width)[None]
    if classical:
        off = np.arccos(np.clip(amp, 0.0, 1.0))
        enc = np.where(even, phi + off, phi - off)
    else:
        enc = np.where(even, amp, phi)
    return PhaseOnlyHologram(enc, "smooth")


@dataclass
class ConversionResult:
    hologram: PhaseOnlyHologram
    loss_history: list[float] = field(default_factory=list)


def _guide_fields(guide, target: TargetStack, planes: DepthPlaneSet, spec: PropagationSpec):
    if isinstance(guide, GaussianSet):
        _, h, w = target.intensity.shape
        guide = rasterize_forward(guide, w, h)
    if not isinstance(guide, ComplexField):
        raise TypeError("guide must be a GaussianSet or ComplexField")
    if guide.shape != target.intensity.shape:
        raise ValueError(f"guide field {guide.shape} does not match target {target.intensity.shape}")
    h0 = guide.to_complex()
    return [propagate_array(h0, spec, d) for d in planes.distances]


def _check_setup(planes: DepthPlaneSet, target: TargetStack, spec: PropagationSpec) -> None:
    if planes.count != target.planes:
        raise ValueError(f"{planes.count} planes but target has {target.planes} masks")
    if spec.channels != target.intensity.shape[0]:
        raise ValueError("spec wavelengths do not match target channels")
    if not np.all(np.isfinite(planes.distances)):
        raise ValueError("plane distances must be finite")


def extract_loss(phi: np.ndarray, planes: DepthPlaneSet, target: TargetStack, spec: PropagationSpec,
                 guide_fields=None, lambda_comp: float = LAMBDA_COMP, lambda_field: float = LAMBDA_FIELD):
    """Guided extraction loss and its gradient w.r.t. the random phase.

    Without ``guide_fields`` only the random branch's reconstruction terms
    are evaluated (plain random-POH optimisation).
    """
    h_rand = np.exp(1j * phi)
    grad_h = np.zeros_like(h_rand)
    total = 0.0
    n = phi.size
    for l, d in enumerate(planes.distances):
        u = propagate_array(h_rand, spec, d)
        inten = u.real**2 + u.imag**2
        tl = target.plane(l)
        v, g_int = loss_recon(inten[None], tl, return_grad=True)
        total += v
        g_int = g_int[0]
        g_u = np.zeros_like(u)
        if guide_fields is not None:
            ug = guide_fields[l]
            ig = ug.real**2 + ug.imag**2
            total += loss_recon(ig[None], tl)
            diff_i = ig - inten
            total += lambda_comp * float(np.mean(diff_i * diff_i))
            g_int = g_int + lambda_comp * (-2.0 * diff_i / n)
            du = u - ug
            total += lambda_field * float(np.mean(np.abs(du.real) + np.abs(du.imag)))
            # np.sign(0) == 0 is the subgradient choice at ties
            g_u = g_u + (lambda_field / n) * (np.sign(du.real) + 1j * np.sign(du.imag))
        g_u = g_u + 2.0 * u * g_int
        grad_h += propagate_backward_array(g_u, spec, d)
    grad_phi = np.imag(np.conj(h_rand) * grad_h)
    return total, grad_phi


def initial_random_phase(shape, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.uniform(-np.pi, np.pi, size=shape)


def convert_random_poh(guide, planes: DepthPlaneSet, target: TargetStack, spec: PropagationSpec, steps: int,
                       seed: int = 0, lambda_comp: float = LAMBDA_COMP, lambda_field: float = LAMBDA_FIELD,
                       lr: float = PHASE_LR, log_every: int = 50) -> ConversionResult:
    """Optimise a random-initialised phase-only hologram guided by a frozen complex hologram."""
    _check_setup(planes, target, spec)
    guide_fields = _guide_fields(guide, target, planes, spec)
    return _optimize(planes, target, spec, steps, seed, lr, guide_fields, lambda_comp, lambda_field, log_every)


def optimize_random_poh(planes: DepthPlaneSet, target: TargetStack, spec: PropagationSpec, steps: int,
                        seed: int = 0, lr: float = PHASE_LR, log_every: int = 50) -> ConversionResult:
    """Unguided random-POH optimisation (reconstruction loss only)."""
    _check_setup(planes, target, spec)
    return _optimize(planes, target, spec, steps, seed, lr, None, 0.0, 0.0, log_every)


def _optimize(planes, target, spec, steps, seed, lr, guide_fields, lambda_comp, lambda_field, log_every):
    if steps < 0:
        raise ValueError("steps must be >= 0")
    params = {"phase": initial_random_phase(target.intensity.shape, seed)}
    opt = Adan({"phase": lr})
    history = []
    for i in range(steps):
        value, grad = extract_loss(params["phase"], planes, target, spec, guide_fields, lambda_comp, lambda_field)
        history.append(value)
        if log_every and (i + 1) % log_every == 0:
            log.info("poh step %d loss %.6g", i + 1, value)
        opt.step(params, {"phase": grad})
    return ConversionResult(PhaseOnlyHologram(params["phase"], "random"), history)


def poh_reconstructions(poh: PhaseOnlyHologram, planes: DepthPlaneSet, spec: PropagationSpec) -> np.ndarray:
    """Intensities ``(L, C, H, W)`` of a phase-only hologram at each plane."""
    h = np.exp(1j * poh.phase)
    out = []
    for d in planes.distances:
        u = propagate_array(h, spec, d)
        out.append(u.real**2 + u.imag**2)
    return np.stack(out)
