"""Command-line front end.

Subcommands cover the batch workflow end to end: simulate a dataset,
fit the noise model, fit the PSF core, run the full deconvolution, and
export rasters for quick looks.  Options can come from a JSON config
file (--config); explicit flags always win over the file.

Exit codes: 0 success, 2 bad configuration or usage, 3 missing or
invalid data, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import logging
import os
import shutil
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import imgio
from .corefit import CoreFitResult, fit_core
from .deconv import DeconvConfig, RobustConfig
from .noise import NoiseModel, fit_noise_model
from .pipeline import SegmentationConfig, run_pipeline, save_pipeline_result
from .simulate import reference_configs, reference_scenario, save_truth_bundle

log = logging.getLogger("aodeconv")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class ConfigError(Exception):
    pass


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        obj = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ConfigError("config root must be a JSON object")
    return obj


def _section(cfg: dict, name: str, cls, **overrides):
    """Build a config dataclass from a JSON section plus flag overrides."""
    section = cfg.get(name, {})
    if not isinstance(section, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    base = cls()
    known = set(base.__dataclass_fields__)
    unknown = set(section) - known
    if unknown:
        raise ConfigError(
            f"unknown keys in config section {name!r}: {sorted(unknown)}"
        )
    merged = {**section, **{k: v for k, v in overrides.items() if v is not None}}
    try:
        return replace(base, **merged)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad values in config section {name!r}: {exc}") from exc


def _atomic_dir_write(out: Path, writer) -> None:
    """Populate `out` via a staging directory so failures leave no bundle."""
    parent = out.parent
    parent.mkdir(parents=True, exist_ok=True)
    if out.exists() and not out.is_dir():
        raise NotADirectoryError(f"output path exists and is not a directory: {out}")
    tmp = parent / f".{out.name}.partial-{os.getpid()}"
    if tmp.exists():
        shutil.rmtree(tmp)
    try:
        writer(tmp)
        if out.exists():
            for item in sorted(tmp.iterdir()):
                os.replace(item, out / item.name)
            tmp.rmdir()
        else:
            os.replace(tmp, out)
    finally:
        if tmp.exists():
            shutil.rmtree(tmp)


def _atomic_file_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.parent / f".{path.name}.partial-{os.getpid()}"
    tmp.write_bytes(data)
    os.replace(tmp, path)


def _simulate_one(seed: int, size: int, out: Path) -> None:
    bundle = reference_scenario(seed, size=size)
    _atomic_dir_write(out, lambda tmp: save_truth_bundle(bundle, tmp))


def cmd_simulate(args) -> int:
    cfg = _load_config(args.config)
    seeds = args.seed if args.seed else [int(cfg.get("seed", 0))]
    size = args.size or int(cfg.get("size", 256))
    out = Path(args.out)
    if len(seeds) == 1:
        _simulate_one(seeds[0], size, out)
        log.info("wrote %s", out)
        return EXIT_OK
    jobs = max(1, args.jobs)
    targets = [(s, out / f"seed_{s}") for s in seeds]
    if jobs == 1:
        for s, d in targets:
            _simulate_one(s, size, d)
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [
                pool.submit(_simulate_one, s, size, d) for s, d in targets
            ]
            for fut in futures:
                fut.result()
    for _, d in targets:
        log.info("wrote %s", d)
    return EXIT_OK


def cmd_fit_noise(args) -> int:
    cfg = _load_config(args.config)
    arc = cfg.get("arc", {})
    width = args.arc_width or float(arc.get("width", 5.0))
    length = args.arc_length or float(arc.get("length", 20.0))
    data = imgio.read_img1(args.data)
    center = None
    if args.center:
        parts = args.center.split(",")
        if len(parts) != 2:
            raise ConfigError(f"--center must be 'x,y', got {args.center!r}")
        center = (float(parts[0]), float(parts[1]))
    model = fit_noise_model(data, center=center, arc_width=width, arc_length=length)
    _atomic_file_write(Path(args.out), model.to_json().encode())
    log.info("eta=%.6g v_ron=%.6g -> %s", model.eta, model.v_ron, args.out)
    return EXIT_OK


def cmd_fit_core(args) -> int:
    data = imgio.read_img1(args.data)
    noise = NoiseModel.from_json(Path(args.noise).read_text())
    result = fit_core(data, noise)
    _atomic_file_write(Path(args.out), result.to_json().encode())
    if args.out_mask:
        mask_path = Path(args.out_mask)
        mask_path.parent.mkdir(parents=True, exist_ok=True)
        imgio.write_img1(mask_path, result.binary_object.astype(np.float64))
    log.info("d_bar=%.6g cost=%.6g -> %s", result.d_bar, result.final_cost, args.out)
    return EXIT_OK


def _deconvolve_one(data_path, noise_path, core_path, out, deconv, seg, robust):
    data = imgio.read_img1(data_path)
    if noise_path:
        noise = NoiseModel.from_json(Path(noise_path).read_text())
    else:
        noise = fit_noise_model(data)
    if core_path:
        text = Path(core_path).read_text()
        core = CoreFitResult.from_json(text)
        if core.binary_object is None:
            from .image import threshold_mask

            core = CoreFitResult(
                d_bar=core.d_bar,
                moffat=core.moffat,
                final_cost=core.final_cost,
                binary_object=threshold_mask(data, core.d_bar),
                cost_history=core.cost_history,
            )
    else:
        core = fit_core(data, noise)
    result = run_pipeline(data, noise, core, deconv, seg, robust)
    _atomic_dir_write(Path(out), lambda tmp: save_pipeline_result(result, tmp))


def _build_run_configs(cfg: dict, args):
    """Validate all three config sections before any data is touched."""
    ref_deconv, _, _ = reference_configs()
    deconv_defaults = {
        k: getattr(ref_deconv, k) for k in ref_deconv.__dataclass_fields__
    }
    section = cfg.get("deconv", {})
    if not isinstance(section, dict):
        raise ConfigError("config section 'deconv' must be an object")
    unknown = set(section) - set(deconv_defaults)
    if unknown:
        raise ConfigError(f"unknown keys in config section 'deconv': {sorted(unknown)}")
    overrides = {
        "mu_obj": args.mu_obj,
        "mu_psf": args.mu_psf,
        "eps_obj": args.eps_obj,
        "n_alt": args.n_alt,
    }
    merged = {
        **deconv_defaults,
        **section,
        **{k: v for k, v in overrides.items() if v is not None},
    }
    try:
        deconv = DeconvConfig(**merged)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad values in config section 'deconv': {exc}") from exc
    seg = _section(cfg, "segmentation", SegmentationConfig)
    robust = _section(cfg, "robust", RobustConfig, threshold=args.wrob_threshold)
    return deconv, seg, robust


def cmd_deconvolve(args) -> int:
    cfg = _load_config(args.config)
    deconv, seg, robust = _build_run_configs(cfg, args)
    out = Path(args.out)
    frames = [Path(p) for p in args.data]
    if len(frames) == 1:
        _deconvolve_one(frames[0], args.noise, args.core, out, deconv, seg, robust)
        log.info("wrote %s", out)
        return EXIT_OK
    jobs = max(1, args.jobs)
    targets = [(f, out / f.stem) for f in frames]
    if jobs == 1:
        for f, d in targets:
            _deconvolve_one(f, args.noise, args.core, d, deconv, seg, robust)
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [
                pool.submit(
                    _deconvolve_one, f, args.noise, args.core, d, deconv, seg, robust
                )
                for f, d in targets
            ]
            for fut in futures:
                fut.result()
    return EXIT_OK


def cmd_export(args) -> int:
    cfg = _load_config(args.config)
    exp = cfg.get("export", {})
    stretch = args.stretch or exp.get("stretch", "linear")
    if stretch not in ("linear", "sqrt", "dual"):
        raise ConfigError(f"unknown stretch {stretch!r}")
    pivot = args.pivot if args.pivot is not None else exp.get("pivot")
    img = imgio.read_img1(args.input)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    imgio.write_pgm(out, img, stretch=stretch, pivot=pivot)
    log.info("wrote %s", out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aodeconv",
        description="Blind deconvolution of adaptive-optics images.",
    )
    parser.add_argument(
        "-v", "--verbose", action="count", default=0,
        help="log progress to stderr (repeat for debug output)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    p.add_argument("--out", required=True, help="output bundle directory")
    p.add_argument("--seed", type=int, nargs="+", help="one or more seeds")
    p.add_argument("--size", type=int, help="grid size (default 256)")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit-noise", help="fit the affine noise model")
    p.add_argument("--data", required=True, help="input .img1 frame")
    p.add_argument("--out", required=True, help="output noise JSON")
    p.add_argument("--center", help="arc centre as 'x,y' (default: centroid)")
    p.add_argument("--arc-width", type=float, help="ring width in pixels")
    p.add_argument("--arc-length", type=float, help="arc length in pixels")
    p.add_argument("--config", help="JSON config file")
    p.set_defaults(func=cmd_fit_noise)

    p = sub.add_parser("fit-core", help="fit threshold object + Moffat core")
    p.add_argument("--data", required=True, help="input .img1 frame")
    p.add_argument("--noise", required=True, help="noise model JSON")
    p.add_argument("--out", required=True, help="output core-fit JSON")
    p.add_argument("--out-mask", help="optional binary object .img1")
    p.add_argument("--config", help="JSON config file")
    p.set_defaults(func=cmd_fit_core)

    p = sub.add_parser("deconvolve", help="run the full pipeline")
    p.add_argument(
        "--data", required=True, nargs="+",
        help="input .img1 frame(s); several fan out to subdirectories",
    )
    p.add_argument("--noise", help="noise JSON (default: fit from the frame)")
    p.add_argument("--core", help="core-fit JSON (default: fit from the frame)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--mu-obj", type=float, help="object smoothness weight")
    p.add_argument("--mu-psf", type=float, help="PSF smoothness weight")
    p.add_argument("--eps-obj", type=float, help="object edge threshold")
    p.add_argument("--n-alt", type=int, help="alternation rounds")
    p.add_argument(
        "--wrob-threshold", type=float, help="robust exclusion threshold"
    )
    p.add_argument("--jobs", type=int, default=1, help="parallel workers")
    p.set_defaults(func=cmd_deconvolve)

    p = sub.add_parser("export", help="export an .img1 raster to 16-bit PGM")
    p.add_argument("--input", required=True, help="input .img1")
    p.add_argument("--out", required=True, help="output .pgm")
    p.add_argument(
        "--stretch", choices=("linear", "sqrt", "dual"),
        help="intensity stretch (default linear)",
    )
    p.add_argument("--pivot", type=float, help="split point for dual stretch")
    p.add_argument("--config", help="JSON config file")
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = (
        logging.WARNING if args.verbose == 0
        else logging.INFO if args.verbose == 1
        else logging.DEBUG
    )
    logging.basicConfig(
        level=level, stream=sys.stderr, format="%(levelname)s %(message)s"
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, NotADirectoryError, PermissionError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (RuntimeError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
