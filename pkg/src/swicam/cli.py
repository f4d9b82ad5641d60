"""``swicam`` command line.

Every subcommand writes its artifacts plus ``manifest.json`` into
``--out``. Failures print one JSON object on stderr and exit with 2
(config), 3 (data) or 4 (infeasible pipeline).
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .config import BUNDLED, RunConfig, build_camera, build_scene, config_dict, load_config, parse_config, schema
from .demod import CarrierSpec, extract_field, locate_carrier
from .errors import ConfigError, DataError, SwiError
from .export import export_phase_png, export_png
from .field import fft2
from .gridio import atomic_write_text, read_grid, write_grid, write_table
from .manifest import build_manifest, read_manifest, sha256_file, write_manifest
from .metrology import MODES, TABLE_HEADER, PrecisionRun, Roi, precision_table, table_rows
from .nlos import (
    PointSource,
    PropagationPlan,
    diffraction_limit,
    focus_search,
    nlos_hologram,
    render_nlos,
    spot_diameter,
)
from .recon import (
    DepthMap,
    SyntheticField,
    border_margin,
    depth_from_phase,
    double_shot,
    reconstruct_depth,
    single_shot,
    synthetic_field,
    unwrap_cascade,
)
from .scene import ApertureSpec, ReferenceBeam, pendulum_motion, render_frame, render_frame_sequence

PROG = "swicam"


def lam_tag(lam: float) -> str:
    return f"{lam * 1e3:g}mm"


# helpers shared by subcommands

def _carrier_specs(cfg: RunConfig) -> list:
    o = cfg.optics
    return [CarrierSpec(tuple(c), o.filter_shape, o.radius) for c in o.carriers]


def _refs(cfg: RunConfig):
    a = cfg.optics.reference_amplitude
    return [ReferenceBeam(tuple(c), a) for c in cfg.optics.carriers]


def _need_two_carriers(cfg: RunConfig):
    if len(cfg.optics.carriers) < 2:
        raise ConfigError("single-shot mode needs two carriers in optics.carriers")


def _synthetic_wavelength(cfg: RunConfig, value: Optional[float]) -> float:
    if value is not None:
        if value not in cfg.optics.synthetic_wavelengths:
            raise ConfigError(f"synthetic wavelength {value} is not in optics.synthetic_wavelengths")
        return value
    lams = cfg.optics.synthetic_wavelengths
    if len(lams) != 1:
        raise ConfigError("several synthetic wavelengths configured; pick one with --synthetic-wavelength")
    return lams[0]


def _save_depth(depth: DepthMap, out: Path, stem: str = "depth"):
    write_grid(depth, out / f"{stem}.grid")
    export_png(depth, out / f"{stem}.png", "viridis")


def _depth_error(depth: DepthMap, truth: DepthMap, reflectivity=None, min_reflectivity: float = 0.2) -> dict:
    """RMSE after removing the best constant offset over usable pixels."""
    m = depth.mask & truth.mask
    if reflectivity is not None:
        m &= reflectivity > min_reflectivity
    if not m.any():
        raise DataError("no pixel is valid in both depth maps")
    r = depth.z[m] - truth.z[m]
    r = r - r.mean()
    return {"rmse_m": float(np.sqrt(np.mean(r**2))), "n_points": int(m.sum())}


# subcommands; each returns (inputs, options) for the manifest

def cmd_simulate(cfg: RunConfig, args, out: Path):
    scene = build_scene(cfg.scene)
    cam = build_camera(cfg.camera)
    ap = ApertureSpec(cfg.optics.pupil_cutoff)
    refs = _refs(cfg)
    write_grid(DepthMap(scene.macro_height, np.ones(scene.shape, bool), "raw", None, scene.pitch),
               out / "truth_depth.grid")
    write_grid(scene.reflectivity, out / "reflectivity.grid", role="amplitude", pitch=scene.pitch)

    if args.sequence:
        sq = cfg.sequence
        if len(refs) < 2 and args.mode == "single-shot":
            _need_two_carriers(cfg)
        h, w = scene.shape
        yy, xx = np.mgrid[0:h, 0:w]
        bob = sq.bob_height * np.exp(-((xx - w / 2) ** 2 + (yy - h / 2) ** 2) / (2 * sq.bob_sigma_px**2))
        bob[np.abs(bob) < abs(sq.bob_height) * 1e-3] = 0.0
        motion = pendulum_motion(bob, sq.frames, sq.pendulum_amplitude_px, sq.pendulum_period)
        pair = cfg.optics.pair(sq.synthetic_wavelength)
        frames = render_frame_sequence(scene, motion, pair, ap, refs[0], refs[1] if len(refs) > 1 else None,
                                       cam, sq.decorrelate, args.mode, args.jobs)
        for k, (img, move) in enumerate(zip(frames, motion)):
            write_grid(img, out / "frames" / f"frame_{k:03d}.grid")
            z = move(scene).macro_height
            write_grid(DepthMap(z, np.ones(z.shape, bool), "raw", None, scene.pitch),
                       out / "frames" / f"truth_{k:03d}.grid")
        return {}, {"mode": args.mode, "sequence": True, "jobs": args.jobs}

    for lam in cfg.optics.synthetic_wavelengths:
        pair = cfg.optics.pair(lam)
        tag = lam_tag(lam)
        if args.mode == "single-shot":
            _need_two_carriers(cfg)
            write_grid(render_frame(scene, pair, ap, refs[0], refs[1], cam), out / f"image_{tag}.grid")
        else:
            for k in (0, 1):
                cam_k = build_camera(cfg.camera.model_copy(update={"seed": cfg.camera.seed + k}))
                img = render_frame(scene, pair, ap, refs[0], None, cam_k, which=k)
                write_grid(img, out / f"image_{tag}_{k + 1}.grid")
    return {}, {"mode": args.mode, "sequence": False, "jobs": args.jobs}


def cmd_demod(cfg: RunConfig, args, out: Path):
    img = read_grid(args.image, role="interferogram")
    specs = _carrier_specs(cfg)
    if args.locate:
        spec = fft2(img.data.astype(float) - img.data.mean())
        # skip the DC autocorrelation disk; blur over half a sideband width
        dc = 2.0 * cfg.optics.pupil_cutoff
        specs = [locate_carrier(spec, c.frequency, dc, c.filter_radius, c.filter_shape, c.filter_radius / 2)
                 for c in specs]
    rows = []
    for k, c in enumerate(specs):
        f = extract_field(img, c, cfg.optics.pupil_cutoff)
        write_grid(f, out / f"field_{k + 1}.grid")
        rows.append((str(k + 1), repr(c.frequency[0]), repr(c.frequency[1]), c.filter_shape, repr(c.filter_radius)))
    write_table(out / "carriers.csv", ("index", "u", "v", "filter_shape", "filter_radius"), rows)
    return {"image": args.image}, {"locate": args.locate}


def _synthetic_from_inputs(cfg: RunConfig, args) -> tuple[SyntheticField, dict]:
    rc = cfg.reconstruction
    if getattr(args, "mode", None):
        rc = rc.model_copy(update={"mode": args.mode})
    lam = _synthetic_wavelength(cfg, args.synthetic_wavelength)
    pair = cfg.optics.pair(lam)
    cut = cfg.optics.pupil_cutoff
    specs = _carrier_specs(cfg)
    if args.fields:
        if len(args.fields) != 2:
            raise ConfigError("--fields takes the two wavelength fields")
        e1, e2 = (read_grid(p, role="field") for p in args.fields)
        margin = border_margin(cfg.optics.radius, rc.smoothing_sigma)
        syn = synthetic_field(e1, e2, pair, rc.smoothing_sigma, rc.mode, rc.coherence_threshold, margin)
        return syn, {f"fields[{i}]": p for i, p in enumerate(args.fields)}
    if not args.image:
        raise ConfigError("give --image (one or two grid files) or --fields")
    imgs = [read_grid(p, role="interferogram") for p in args.image]
    if rc.mode == "single-shot":
        if len(imgs) != 1:
            raise ConfigError("single-shot mode takes exactly one image")
        _need_two_carriers(cfg)
        syn = single_shot(imgs[0], specs[:2], pair, cut, rc.smoothing_sigma, rc.coherence_threshold)
    else:
        if len(imgs) != 2:
            raise ConfigError("double-shot mode takes two images (lambda1 first)")
        syn = double_shot(imgs[0], imgs[1], specs[0], pair, cut, rc.smoothing_sigma, rc.coherence_threshold)
    return syn, {f"image[{i}]": p for i, p in enumerate(args.image)}


def cmd_reconstruct(cfg: RunConfig, args, out: Path):
    syn, inputs = _synthetic_from_inputs(cfg, args)
    write_grid(syn, out / "synthetic.grid")
    pm = syn.phase()
    write_grid(pm, out / "phase.grid", pitch=syn.pitch)
    export_phase_png(pm.phase, out / "phase.png", mask=pm.valid)
    depth = reconstruct_depth(syn, cfg.reconstruction.offset)
    _save_depth(depth, out)
    if args.truth:
        truth = read_grid(args.truth, role="depth")
        refl = read_grid(args.reflectivity, role="amplitude") if args.reflectivity else None
        err = _depth_error(depth, truth, refl)
        write_table(out / "metrics.csv", ("rmse_mm", "n_points"),
                    [(f"{err['rmse_m'] * 1e3:.6g}", str(err["n_points"]))])
        print(f"rmse_mm={err['rmse_m'] * 1e3:.4f} n_points={err['n_points']}")
        inputs["truth"] = args.truth
        if args.reflectivity:
            inputs["reflectivity"] = args.reflectivity
    return inputs, {"synthetic_wavelength": args.synthetic_wavelength}


def cmd_unwrap(cfg: RunConfig, args, out: Path):
    fields = [read_grid(p, role="synthetic") for p in args.synthetic]
    rc = cfg.reconstruction
    res = unwrap_cascade(fields, rc.guidance_sigma, args.max_depth if args.max_depth is not None else rc.max_depth)
    write_grid(res.result, out / "unwrapped.grid", pitch=fields[0].pitch)
    depth = depth_from_phase(res.result, res.synthetic_wavelength, offset=rc.offset, pitch=fields[0].pitch)
    _save_depth(depth, out)
    rows = [(lam_tag(s.synthetic_wavelength), lam_tag(s.guidance_wavelength), f"{s.ratio:.6g}",
             f"{s.guidance_noise:.6g}") for s in res.stages]
    write_table(out / "stages.csv", ("lambda_syn", "guidance", "ratio", "guidance_noise_rad"), rows)
    inputs = {f"synthetic[{i}]": p for i, p in enumerate(args.synthetic)}
    if args.truth:
        truth = read_grid(args.truth, role="depth")
        true_phase = 4 * np.pi * truth.z / res.synthetic_wavelength
        v = res.valid & truth.mask
        k = np.rint((res.phase - true_phase) / (2 * np.pi))[v]
        errors = int(np.sum(k != np.median(k))) if k.size else 0
        write_table(out / "fringe_errors.csv", ("fringe_order_errors", "n_valid"), [(str(errors), str(int(v.sum())))])
        print(f"fringe_order_errors={errors} n_valid={int(v.sum())}")
        inputs["truth"] = args.truth
    return inputs, {"max_depth": args.max_depth}


def cmd_eval_precision(cfg: RunConfig, args, out: Path):
    scene = build_scene(cfg.scene)
    ap = ApertureSpec(cfg.optics.pupil_cutoff)
    refs = _refs(cfg)
    roi = Roi.parse(cfg.precision.roi) if cfg.precision.roi else None
    cam = build_camera(cfg.camera)
    runs = []
    for lam in cfg.precision.synthetic_wavelengths:
        pair = cfg.optics.pair(lam)
        for mode in cfg.precision.modes:
            if mode == "single-shot":
                _need_two_carriers(cfg)
                imgs = (render_frame(scene, pair, ap, refs[0], refs[1], cam),)
                carriers = tuple(_carrier_specs(cfg)[:2])
            else:
                cam2 = build_camera(cfg.camera.model_copy(update={"seed": cfg.camera.seed + 1}))
                imgs = (render_frame(scene, pair, ap, refs[0], None, cam, 0),
                        render_frame(scene, pair, ap, refs[0], None, cam2, 1))
                carriers = (_carrier_specs(cfg)[0],)
            runs.append(PrecisionRun(pair, mode, imgs, carriers, cfg.optics.pupil_cutoff, roi,
                                     cfg.reconstruction.smoothing_sigma))
    reports = precision_table(runs, args.jobs)
    rows = table_rows(reports)
    write_table(out / "precision.csv", TABLE_HEADER, rows)
    for r in rows:
        print(",".join(r))
    return {}, {"jobs": args.jobs}


def cmd_nlos(cfg: RunConfig, args, out: Path):
    nc = cfg.nlos
    pair = cfg.optics.pair(nc.synthetic_wavelength)
    ap = ApertureSpec(cfg.optics.pupil_cutoff)
    _need_two_carriers(cfg)
    refs = _refs(cfg)
    inputs = {}
    if args.image:
        img = read_grid(args.image, role="interferogram")
        inputs["image"] = args.image
    else:
        sources = [PointSource(s.x, s.y, s.z, s.amplitude) for s in nc.sources]
        img = render_nlos(nc.shape, nc.pitch, sources, pair, ap, refs[0], refs[1], build_camera(cfg.camera), nc.seed)
        write_grid(img, out / "screen_image.grid")
    syn = single_shot(img, _carrier_specs(cfg)[:2], pair, cfg.optics.pupil_cutoff,
                      cfg.reconstruction.smoothing_sigma)
    holo = nlos_hologram(syn, nc.smoothing_sigma)
    plan = PropagationPlan(nc.synthetic_wavelength, nc.z_range, holo.pitch)
    res = focus_search(holo, plan, jobs=args.jobs)
    write_table(out / "focus_scores.csv", ("z_mm", "score"),
                [(f"{z * 1e3:.6g}", f"{s:.6g}") for z, s in zip(res.depths, res.scores)])
    write_grid(res.image, out / "focus.grid", role="amplitude", pitch=holo.pitch)
    export_png(res.image, out / "focus.png", "inferno")
    row, col = res.peak
    span = min(holo.shape) * holo.pitch
    diam = spot_diameter(res.image, holo.pitch)
    limit = diffraction_limit(nc.synthetic_wavelength, res.z_star, span)
    write_table(out / "focus.csv", ("z_star_mm", "row", "col", "focused", "spot_diameter_mm", "diffraction_limit_mm"),
                [(f"{res.z_star * 1e3:.6g}", str(row), str(col), str(res.focused).lower(),
                  f"{diam * 1e3:.6g}", f"{limit * 1e3:.6g}")])
    print(f"z_star_mm={res.z_star * 1e3:.3f} row={row} col={col} focused={str(res.focused).lower()}")
    return inputs, {"jobs": args.jobs}


def cmd_video(cfg: RunConfig, args, out: Path):
    frames_dir = Path(args.frames)
    paths = sorted(frames_dir.glob("frame_*.grid"))
    if not paths:
        raise ConfigError(f"no frame_*.grid files in {frames_dir}")
    _need_two_carriers(cfg)
    pair = cfg.optics.pair(cfg.sequence.synthetic_wavelength)
    rc = cfg.reconstruction
    specs = _carrier_specs(cfg)[:2]

    def one(p: Path):
        img = read_grid(p, role="interferogram")
        syn = single_shot(img, specs, pair, cfg.optics.pupil_cutoff, rc.smoothing_sigma, rc.coherence_threshold)
        stem = p.stem.replace("frame_", "depth_")
        depth = reconstruct_depth(syn, rc.offset)
        _save_depth(depth, out, stem)
        truth = p.with_name(p.name.replace("frame_", "truth_"))
        if not truth.is_file():
            return stem, None
        return stem, _depth_error(depth, read_grid(truth, role="depth"))

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            done = list(pool.map(one, paths))
    else:
        done = [one(p) for p in paths]
    atomic_write_text(out / "frames.txt", "\n".join(stem for stem, _ in done) + "\n")
    inputs = {f"frame[{i}]": str(p) for i, p in enumerate(paths)}
    if all(err is not None for _, err in done):
        # truth_XXX.grid next to the frames (as written by simulate --sequence)
        rows = [(stem, f"{err['rmse_m'] * 1e3:.6g}", str(err["n_points"])) for stem, err in done]
        write_table(out / "video_metrics.csv", ("frame", "rmse_mm", "n_points"), rows)
        for r in rows:
            print(f"{r[0]} rmse_mm={float(r[1]):.4f}")
        for i, p in enumerate(paths):
            inputs[f"truth[{i}]"] = str(p.with_name(p.name.replace("frame_", "truth_")))
    return inputs, {"jobs": args.jobs}


COMMANDS = {
    "simulate": cmd_simulate,
    "demod": cmd_demod,
    "reconstruct": cmd_reconstruct,
    "unwrap": cmd_unwrap,
    "eval-precision": cmd_eval_precision,
    "nlos": cmd_nlos,
    "video": cmd_video,
}


def run_command(name: str, cfg: RunConfig, args, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    inputs, options = COMMANDS[name](cfg, args, out)
    options = dict(options)
    options["argv"] = _replay_args(args)
    manifest = build_manifest(name, options, inputs, config_dict(cfg), out)
    write_manifest(manifest, out)
    return manifest


# argument names a rerun must restore (everything but --config/--out)
_REPLAY = ("mode", "sequence", "jobs", "image", "locate", "fields", "truth", "reflectivity",
           "synthetic_wavelength", "synthetic", "max_depth", "frames")


def _replay_args(args) -> dict:
    return {k: getattr(args, k) for k in _REPLAY if hasattr(args, k)}


def cmd_rerun(args) -> int:
    """Redo a run from its manifest and compare output digests."""
    man = read_manifest(args.manifest)
    name = man.get("command")
    if name not in COMMANDS:
        raise DataError(f"manifest names unknown command {name!r}")
    for key, rec in man.get("inputs", {}).items():
        p = Path(rec["path"])
        if not p.is_file():
            raise ConfigError(f"input {key} missing: {p}")
        if sha256_file(p) != rec["sha256"]:
            raise DataError(f"input {key} changed since the run: {p}")
    cfg = parse_config(man["config"])
    ns = argparse.Namespace(**man["options"]["argv"])
    out = Path(args.out)
    new = run_command(name, cfg, ns, out)
    old_out, new_out = man["outputs"], new["outputs"]
    diff = sorted(k for k in set(old_out) | set(new_out) if old_out.get(k) != new_out.get(k))
    if diff:
        raise DataError(f"rerun differs from manifest in {len(diff)} file(s): {', '.join(diff[:5])}")
    print(f"reproduced {len(new_out)} file(s) bit-identically")
    return 0


def _add_common(p: argparse.ArgumentParser, config=True):
    if config:
        p.add_argument("--config", default="demo",
                       help=f"YAML config file or bundled name ({', '.join(BUNDLED)}); default: demo")
    p.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog=PROG, description="Synthetic-wavelength interferometric depth imaging.")
    ap.add_argument("--version", action="version", version=f"{PROG} {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="scene -> interferogram grid files")
    _add_common(p)
    p.add_argument("--mode", choices=MODES, default="single-shot")
    p.add_argument("--sequence", action="store_true", help="render the motion sequence into frames/")
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("demod", help="interferogram -> one complex field per carrier")
    _add_common(p)
    p.add_argument("--image", required=True)
    p.add_argument("--locate", action="store_true", help="search for the carrier peaks near the configured ones")

    p = sub.add_parser("reconstruct", help="images or fields -> synthetic phase and depth")
    _add_common(p)
    p.add_argument("--image", nargs="+", help="one crossed-fringe image, or two single-reference images")
    p.add_argument("--fields", nargs=2, help="the two wavelength fields from demod")
    p.add_argument("--mode", choices=MODES, default=None, help="override reconstruction.mode")
    p.add_argument("--synthetic-wavelength", type=float, default=None)
    p.add_argument("--truth", help="ground-truth depth grid; prints RMSE")
    p.add_argument("--reflectivity", help="reflectivity grid; RMSE only where > 0.2")

    p = sub.add_parser("unwrap", help="synthetic fields -> unwrapped phase at the finest wavelength")
    _add_common(p)
    p.add_argument("--synthetic", nargs="+", required=True)
    p.add_argument("--max-depth", type=float, default=None, help="known depth range (m)")
    p.add_argument("--truth", help="ground-truth depth grid; prints fringe-order errors")

    p = sub.add_parser("eval-precision", help="plane-fit precision sweep over synthetic wavelengths")
    _add_common(p)
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("nlos", help="focus a hidden point source through a diffuser")
    _add_common(p)
    p.add_argument("--image", help="use this screen image instead of simulating one")
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("video", help="per-frame single-shot depth over a frame directory")
    _add_common(p)
    p.add_argument("--frames", required=True)
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("rerun", help="redo a run from its manifest and verify the outputs")
    p.add_argument("--manifest", required=True, help="manifest.json or the directory holding it")
    p.add_argument("--out", required=True)

    p = sub.add_parser("schema", help="print the config JSON schema")
    p.add_argument("--out", default=None, help="write to this file instead of stdout")
    return ap


def _report(exc: SwiError) -> int:
    err = {"status": "error", "category": exc.category, "type": type(exc).__name__,
           "exit_code": exc.exit_code, "message": str(exc)}
    print(json.dumps(err), file=sys.stderr)
    return exc.exit_code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "schema":
            text = json.dumps(schema(), indent=2, sort_keys=True) + "\n"
            if args.out:
                atomic_write_text(args.out, text)
            else:
                sys.stdout.write(text)
            return 0
        if args.command == "rerun":
            return cmd_rerun(args)
        if getattr(args, "jobs", 1) < 1:
            raise ConfigError("--jobs must be at least 1")
        cfg = load_config(args.config)
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            run_command(args.command, cfg, args, Path(args.out))
        return 0
    except SwiError as exc:
        return _report(exc)


if __name__ == "__main__":
    sys.exit(main())
