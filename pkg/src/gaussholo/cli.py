"""Command-line entry point: ``gaussholo {train,convert,propagate,metrics}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io as hio
from ._threads import configure_threading


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("--threads", type=int, help="kernel threads (<= NUMBA_NUM_THREADS)")
    p.add_argument("--steps", type=int, help="override the configured step count")


def cmd_train(args) -> int:
    from .pipeline import load_config, train

    cfg = load_config(args.config, seed=args.seed, threads=args.threads, steps=args.steps,
                      output_dir=args.output_dir, mode=args.mode)
    result = train(cfg)
    print(json.dumps({"output_dir": str(result.output_dir), "mean_psnr": result.metrics.mean_psnr,
                      "mean_ssim": result.metrics.mean_ssim, **result.extra_metrics}, indent=2))
    return 0


def cmd_convert(args) -> int:
    from .convert import convert_random_poh, dpac_encode, poh_reconstructions
    from .pipeline import compute_metrics, load_config, load_target

    out = Path(args.output)
    if args.mode == "smooth":
        field = hio.load_field(args.input)
        poh = dpac_encode(field, classical=args.classical)
        report = {}
    else:
        if args.config is None:
            parser_error("convert --mode random needs --config for the target, planes and optics")
        cfg = load_config(args.config, seed=args.seed, threads=args.threads)
        configure_threading(cfg.threads)
        target = load_target(cfg)
        planes, spec = cfg.planes(), cfg.propagation()
        field = hio.load_field(args.input)
        steps = args.steps if args.steps is not None else cfg.convert_steps
        res = convert_random_poh(field, planes, target, spec, steps, seed=cfg.seed,
                                 lambda_comp=cfg.lambda_comp, lambda_field=cfg.lambda_field, lr=cfg.convert_lr)
        poh = res.hologram
        m = compute_metrics(poh_reconstructions(poh, planes, spec), target.intensity)
        report = m.to_dict()
    out.mkdir(parents=True, exist_ok=True)
    hio.save_phase_png(out / f"poh_{poh.kind}.png", poh.phase)
    hio.save_field(out / f"poh_{poh.kind}.cghf", poh.field())
    print(json.dumps({"output": str(out), "kind": poh.kind, **report}, indent=2))
    return 0


def cmd_propagate(args) -> int:
    from .io import save_image
    from .propagation import DEFAULT_WAVELENGTHS, PropagationSpec, propagate

    configure_threading(args.threads)
    field = hio.load_field(args.input)
    wl = args.wavelengths or (DEFAULT_WAVELENGTHS if field.channels == 3 else (532e-9,))
    spec = PropagationSpec(tuple(wl), args.pitch, args.pad_factor, args.aperture)
    out = propagate(field, spec, args.distance)
    hio.save_field(args.output, out)
    if args.intensity_png:
        save_image(args.intensity_png, np.clip(out.intensity(), 0.0, 1.0))
    return 0


def cmd_metrics(args) -> int:
    from .pipeline import compute_metrics

    target = hio.load_image(args.target, args.channels)
    files = sorted(Path(args.recon).glob(args.pattern))
    if not files:
        parser_error(f"no reconstructions matching {args.pattern!r} in {args.recon}")
    recon = np.stack([hio.load_image(f, target.shape[0]) for f in files])
    m = compute_metrics(recon, target)
    print(json.dumps({"files": [f.name for f in files], **m.to_dict()}, indent=2))
    return 0


def cmd_oracle(args) -> int:
    """Cross-check the fast kernels against the brute-force references on random inputs."""
    from .oracles import brute_rasterize, direct_dft_propagate
    from .params import GaussianSet
    from .propagation import PropagationSpec, propagate_array
    from .raster import rasterize_forward

    rng = np.random.default_rng(args.seed or 0)
    worst = {"raster": 0.0, "propagation": 0.0}
    for _ in range(args.trials):
        n, c = int(rng.integers(1, 17)), int(rng.choice([1, 3]))
        w, h = int(rng.integers(8, 65)), int(rng.integers(8, 65))
        gs = GaussianSet(rng.normal(0, 0.8, (n, 2)), rng.uniform(-1, 2.5, (n, 2)), rng.uniform(-3, 3, n),
                         rng.uniform(0, 1, (n, c)), rng.uniform(-3, 3, (n, c)), rng.normal(0, 2, n))
        err = np.abs(rasterize_forward(gs, w, h).to_complex() - brute_rasterize(gs.arrays(), w, h)).max()
        worst["raster"] = max(worst["raster"], float(err))
        u = rng.normal(size=(1, h, w)) + 1j * rng.normal(size=(1, h, w))
        d = float(rng.uniform(0, 10e-3))
        ref = direct_dft_propagate(u, (532e-9,), 3.74e-6, d)
        err = np.abs(propagate_array(u, PropagationSpec((532e-9,)), d) - ref).max()
        worst["propagation"] = max(worst["propagation"], float(err))
    print(json.dumps({"trials": args.trials, "max_abs_error": worst}, indent=2))
    return 0


def parser_error(msg: str):
    print(f"gaussholo: error: {msg}", file=sys.stderr)
    raise SystemExit(2)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gaussholo", description=__doc__)
    p.add_argument("-q", "--quiet", action="store_true", help="only log warnings")
    sub = p.add_subparsers(dest="command", required=True, metavar="{train,convert,propagate,metrics}")

    t = sub.add_parser("train", help="fit a Gaussian hologram from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--output-dir")
    t.add_argument("--mode", choices=["complex", "smooth_poh", "random_poh"])
    _add_common(t)
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("convert", help="convert a complex field to a phase-only hologram")
    c.add_argument("--mode", choices=["smooth", "random"], required=True)
    c.add_argument("--input", required=True, help="field container (.cghf)")
    c.add_argument("--output", required=True, help="output directory")
    c.add_argument("--config", help="run config (required for --mode random)")
    c.add_argument("--classical", action="store_true", help="two-phase DPAC instead of the default encoding")
    _add_common(c)
    c.set_defaults(func=cmd_convert)

    pr = sub.add_parser("propagate", help="propagate a field container by a distance")
    pr.add_argument("--input", required=True)
    pr.add_argument("--output", required=True)
    pr.add_argument("--distance", type=float, required=True, help="metres; negative propagates backwards")
    pr.add_argument("--wavelengths", type=float, nargs="+")
    pr.add_argument("--pitch", type=float, default=3.74e-6)
    pr.add_argument("--pad-factor", type=int, default=2)
    pr.add_argument("--aperture", type=float, default=0.0)
    pr.add_argument("--intensity-png")
    _add_common(pr)
    pr.set_defaults(func=cmd_propagate)

    m = sub.add_parser("metrics", help="PSNR/SSIM of reconstruction PNGs against a target")
    m.add_argument("--recon", required=True, help="directory of reconstruction PNGs")
    m.add_argument("--target", required=True)
    m.add_argument("--pattern", default="recon_plane*.png")
    m.add_argument("--channels", type=int, choices=[1, 3])
    m.set_defaults(func=cmd_metrics)

    o = sub.add_parser("oracle")  # undocumented: manual cross-check against references
    o.add_argument("--trials", type=int, default=5)
    o.add_argument("--seed", type=int)
    o.set_defaults(func=cmd_oracle)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as e:
        print(f"gaussholo: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
