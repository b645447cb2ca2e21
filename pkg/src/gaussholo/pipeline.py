"""End-to-end hologram fitting: configuration, initialisation, training,
metrics and artifact output."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import io as hio
from ._threads import configure_threading
from .convert import LAMBDA_COMP, LAMBDA_FIELD, PHASE_LR, convert_random_poh, dpac_encode, poh_reconstructions
from .field import ComplexField
from .loss import DepthPlaneSet, TargetStack, ssim_map, training_loss
from .optim import DEFAULT_LRS, POSITION_LR_MIN, Adan, cosine_lr
from .params import GaussianSet, inverse_activate_position
from .propagation import DEFAULT_PITCH, DEFAULT_WAVELENGTHS, PropagationSpec, propagate_array, propagate_backward_array
from .raster import rasterize_backward, rasterize_forward

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

log = logging.getLogger(__name__)

MODES = ("complex", "smooth_poh", "random_poh")
GRAY_WAVELENGTH = 532e-9
BOUNDARY_NUDGE = 1e-6


@dataclass
class RunConfig:
    image_path: str | None = None
    depth_path: str | None = None
    width: int | None = None
    height: int | None = None
    channels: int = 3
    gaussian_count: int | None = None
    parameter_ratio: float | None = None
    plane_count: int = 2
    center_distance: float = 3e-3
    plane_spacing: float | None = None
    volume_depth: float = 4e-3
    near_is_high: bool = True
    wavelengths: tuple[float, ...] | None = None
    pixel_pitch: float = DEFAULT_PITCH
    pad_factor: int = 2
    aperture_radius: float = 0.0
    steps: int = 2000
    seed: int = 0
    threads: int | None = None
    mode: str = "complex"
    output_dir: str = "out"
    log_every: int = 50
    convert_steps: int = 600
    lambda_comp: float = LAMBDA_COMP
    lambda_field: float = LAMBDA_FIELD
    convert_lr: float = PHASE_LR
    classical_dpac: bool = False

    def __post_init__(self):
        if (self.gaussian_count is None) == (self.parameter_ratio is None):
            raise ValueError("give exactly one of gaussian_count / parameter_ratio")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.channels not in (1, 3):
            raise ValueError("channels must be 1 or 3")
        if self.wavelengths is not None:
            self.wavelengths = tuple(float(w) for w in self.wavelengths)
        if self.gaussian_count is not None and self.gaussian_count < 1:
            raise ValueError("gaussian_count must be >= 1")
        if self.parameter_ratio is not None and self.parameter_ratio <= 0:
            raise ValueError("parameter_ratio must be > 0")

    @property
    def spacing(self) -> float:
        if self.plane_spacing is not None:
            return self.plane_spacing
        return self.volume_depth / (self.plane_count - 1) if self.plane_count > 1 else 0.0

    def planes(self) -> DepthPlaneSet:
        return DepthPlaneSet(self.plane_count, self.center_distance, self.spacing)

    def propagation(self) -> PropagationSpec:
        wl = self.wavelengths
        if wl is None:
            wl = DEFAULT_WAVELENGTHS if self.channels == 3 else (GRAY_WAVELENGTH,)
        if len(wl) != self.channels:
            raise ValueError(f"{len(wl)} wavelengths for {self.channels} channels")
        return PropagationSpec(wl, self.pixel_pitch, self.pad_factor, self.aperture_radius)

    def num_gaussians(self, height: int, width: int) -> int:
        if self.gaussian_count is not None:
            return self.gaussian_count
        return max(1, int(round(2 * self.channels * height * width / (12.0 * self.parameter_ratio))))


# config file section -> {key: RunConfig field}
_SCHEMA = {
    "input": {"image": "image_path", "depth": "depth_path", "near_is_high": "near_is_high"},
    "image": {"width": "width", "height": "height", "channels": "channels"},
    "gaussians": {"count": "gaussian_count", "ratio": "parameter_ratio"},
    "planes": {"count": "plane_count", "center_distance": "center_distance", "spacing": "plane_spacing",
               "volume_depth": "volume_depth"},
    "propagation": {"wavelengths": "wavelengths", "pixel_pitch": "pixel_pitch", "pad_factor": "pad_factor",
                    "aperture_radius": "aperture_radius"},
    "train": {"steps": "steps", "seed": "seed", "threads": "threads", "mode": "mode",
              "output_dir": "output_dir", "log_every": "log_every"},
    "convert": {"steps": "convert_steps", "lambda_comp": "lambda_comp", "lambda_field": "lambda_field",
                "lr": "convert_lr", "classical_dpac": "classical_dpac"},
}


def config_from_dict(data: dict, base_dir: Path | None = None, **overrides) -> RunConfig:
    kwargs = {}
    for section, body in data.items():
        if section not in _SCHEMA:
            raise ValueError(f"unknown config section [{section}]")
        for key, value in body.items():
            if key not in _SCHEMA[section]:
                raise ValueError(f"unknown key {key!r} in [{section}]")
            kwargs[_SCHEMA[section][key]] = value
    if base_dir is not None:
        for k in ("image_path", "depth_path", "output_dir"):
            if kwargs.get(k) is not None and not Path(kwargs[k]).is_absolute():
                kwargs[k] = str(base_dir / kwargs[k])
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**kwargs)


def load_config(path, **overrides) -> RunConfig:
    path = Path(path)
    with path.open("rb") as f:
        data = tomllib.load(f)
    return config_from_dict(data, path.parent, **overrides)


@dataclass
class Metrics:
    psnr_per_plane: list[float]
    ssim_per_plane: list[float]

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr_per_plane))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim_per_plane))

    def to_dict(self) -> dict:
        return {"psnr_per_plane": self.psnr_per_plane, "ssim_per_plane": self.ssim_per_plane,
                "mean_psnr": self.mean_psnr, "mean_ssim": self.mean_ssim}


def psnr(recon: np.ndarray, target: np.ndarray) -> float:
    """PSNR in dB with peak 1; both inputs clipped to [0, 1]; ``inf`` when identical."""
    a = np.clip(recon, 0.0, 1.0)
    b = np.clip(target, 0.0, 1.0)
    mse = float(np.mean((a - b) ** 2))
    return math.inf if mse == 0.0 else 10.0 * math.log10(1.0 / mse)


def compute_metrics(recon: np.ndarray, target: np.ndarray) -> Metrics:
    """Per-plane PSNR and SSIM of ``recon (L, C, H, W)`` against ``target (C, H, W)``."""
    recon = np.asarray(recon, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if recon.ndim != 4 or recon.shape[1:] != target.shape:
        raise ValueError(f"recon {recon.shape} does not match target {target.shape}")
    t = np.clip(target, 0.0, 1.0)
    ps, ss = [], []
    for plane in recon:
        p = np.clip(plane, 0.0, 1.0)
        ps.append(psnr(p, t))
        ss.append(float(ssim_map(p, t).mean()))
    return Metrics(ps, ss)


def init_gaussians(n: int, channels: int, width: int, height: int, seed: int) -> GaussianSet:
    if n < 1:
        raise ValueError("need at least one gaussian")
    rng = np.random.default_rng(seed)
    dims = np.array([width, height], dtype=np.float64)
    raw = rng.uniform(0.0, 1.0, size=(n, 2)) * dims
    raw = np.clip(raw, BOUNDARY_NUDGE * dims, dims - BOUNDARY_NUDGE * dims)
    amplitude = rng.uniform(0.0, 1.0, size=(n, channels))
    return GaussianSet(
        pre_position=inverse_activate_position(raw, width, height),
        pre_scale=np.tile(np.log([1.5, 5.0]), (n, 1)),
        rotation=np.zeros(n),
        amplitude=amplitude,
        phase=np.zeros((n, channels)),
        pre_opacity=np.full(n, -0.5),
    )


def load_target(config: RunConfig) -> TargetStack:
    if config.image_path is None:
        raise ValueError("config has no input image")
    try:
        image = hio.load_image(config.image_path, config.channels)
    except (OSError, ValueError) as e:
        raise ValueError(f"cannot read image {config.image_path}: {e}") from e
    _, h, w = image.shape
    if (config.width is not None and config.width != w) or (config.height is not None and config.height != h):
        raise ValueError(f"image is {w}x{h} but config asks for {config.width}x{config.height}")
    if config.depth_path is not None:
        try:
            depth = hio.load_depth(config.depth_path)
        except (OSError, ValueError) as e:
            raise ValueError(f"cannot read depth map {config.depth_path}: {e}") from e
        if depth.shape != (h, w):
            raise ValueError(f"depth map is {depth.shape[1]}x{depth.shape[0]} but image is {w}x{h}")
    else:
        depth = np.zeros((h, w))
    return TargetStack.from_image(image, depth, config.plane_count, config.near_is_high)


def reconstruct(field: ComplexField, planes: DepthPlaneSet, spec: PropagationSpec) -> np.ndarray:
    u0 = field.to_complex()
    out = []
    for d in planes.distances:
        u = propagate_array(u0, spec, d)
        out.append(u.real**2 + u.imag**2)
    return np.stack(out)


def loss_and_grad(gs: GaussianSet, target: TargetStack, planes: DepthPlaneSet, spec: PropagationSpec):
    """Rasterize, propagate to every plane, evaluate the training loss and backpropagate."""
    _, h, w = target.intensity.shape
    u0 = rasterize_forward(gs, w, h).to_complex()
    fields = [propagate_array(u0, spec, d) for d in planes.distances]
    recon = np.stack([u.real**2 + u.imag**2 for u in fields])
    value, g_int = training_loss(recon, target, return_grad=True)
    g0 = np.zeros_like(u0)
    for l, d in enumerate(planes.distances):
        g0 += propagate_backward_array(2.0 * fields[l] * g_int[l], spec, d)
    grads = rasterize_backward(gs, g0.real, g0.imag)
    return value, grads, recon


@dataclass
class TrainResult:
    gaussians: GaussianSet
    metrics: Metrics
    loss_history: list[float]
    recon: np.ndarray
    extra_metrics: dict = field(default_factory=dict)
    output_dir: Path | None = None


def fit(gs: GaussianSet, target: TargetStack, planes: DepthPlaneSet, spec: PropagationSpec, steps: int,
        log_every: int = 50) -> list[float]:
    """Optimise ``gs`` in place for ``steps`` iterations; returns the loss per step."""
    lrs = dict(DEFAULT_LRS)
    lrs["pre_position"] = lambda k: cosine_lr(k, steps, DEFAULT_LRS["pre_position"], POSITION_LR_MIN)
    opt = Adan(lrs)
    params = gs.arrays()
    history = []
    for i in range(steps):
        value, grads, _ = loss_and_grad(gs, target, planes, spec)
        history.append(value)
        if log_every and (i + 1) % log_every == 0:
            log.info("step %d loss %.6g", i + 1, value)
        opt.step(params, grads.as_dict())
        gs.validate()
    return history


def train(config: RunConfig, write: bool = True) -> TrainResult:
    configure_threading(config.threads)
    target = load_target(config)
    planes = config.planes()
    spec = config.propagation()
    c, h, w = target.intensity.shape
    n = config.num_gaussians(h, w)
    gs = init_gaussians(n, c, w, h, config.seed)
    log.info("fitting %d gaussians (%d scalars) to %dx%dx%d over %d planes", n, gs.num_scalars, c, h, w,
             planes.count)
    t0 = time.perf_counter()
    history = fit(gs, target, planes, spec, config.steps, config.log_every)
    elapsed = time.perf_counter() - t0

    field_ = rasterize_forward(gs, w, h)
    recon = reconstruct(field_, planes, spec)
    metrics = compute_metrics(recon, target.intensity)
    result = TrainResult(gs, metrics, history, recon)

    extras = {}
    poh_out = {}
    if config.mode == "smooth_poh":
        poh = dpac_encode(field_, classical=config.classical_dpac)
        r = poh_reconstructions(poh, planes, spec)
        extras["smooth_poh"] = compute_metrics(r, target.intensity).to_dict()
        poh_out["smooth"] = (poh, r)
    elif config.mode == "random_poh":
        conv = convert_random_poh(field_, planes, target, spec, config.convert_steps, seed=config.seed,
                                  lambda_comp=config.lambda_comp, lambda_field=config.lambda_field,
                                  lr=config.convert_lr, log_every=config.log_every)
        r = poh_reconstructions(conv.hologram, planes, spec)
        extras["random_poh"] = compute_metrics(r, target.intensity).to_dict()
        extras["random_poh"]["trainable_scalars"] = int(conv.hologram.phase.size)
        poh_out["random"] = (conv.hologram, r)
    result.extra_metrics = extras

    if write:
        out = Path(config.output_dir)
        result.output_dir = out
        _write_artifacts(out, config, result, field_, planes, poh_out, elapsed)
    return result


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _write_artifacts(out: Path, config: RunConfig, result: TrainResult, field_: ComplexField,
                     planes: DepthPlaneSet, poh_out: dict, elapsed: float) -> None:
    out.mkdir(parents=True, exist_ok=True)
    hio.save_field(out / "field.cghf", field_)
    hio.save_gaussians(out / "gaussians.cggs", result.gaussians)
    for l, r in enumerate(result.recon):
        hio.save_image(out / f"recon_plane{l + 1}.png", r)
    for kind, (poh, recon) in poh_out.items():
        hio.save_phase_png(out / f"poh_{kind}.png", poh.phase)
        hio.save_field(out / f"poh_{kind}.cghf", poh.field())
        for l, r in enumerate(recon):
            hio.save_image(out / f"poh_{kind}_plane{l + 1}.png", r)
    metrics = result.metrics.to_dict()
    metrics.update(result.extra_metrics)
    metrics["final_loss"] = result.loss_history[-1]
    metrics["trainable_scalars"] = result.gaussians.num_scalars
    hio.atomic_write_text(out / "metrics.json", _json(metrics))
    hio.atomic_write_text(out / "loss_history.csv",
                          "step,loss\n" + "".join(f"{i + 1},{v!r}\n" for i, v in enumerate(result.loss_history)))
    cfg = asdict(config)
    run = {
        "config": cfg,
        "gaussian_count": result.gaussians.count,
        "trainable_scalars": result.gaussians.num_scalars,
        "plane_distances": [float(d) for d in planes.distances],
        "seconds": elapsed,
        "threads": configure_threading(None),
    }
    hio.atomic_write_text(out / "run.json", _json(run))
