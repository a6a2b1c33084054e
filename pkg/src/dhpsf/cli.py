"""Command-line front end.

Subcommands tie the library modules into reproducible runs: render masks
and PSF stacks, synthesize camera frames, localize, calibrate, and export
Fisher-information and aberration-scan tables.  All outputs carry a
provenance header (tool version, config hash, seed) and are byte-identical
for identical (config, seed).

Exit codes: 0 success, 2 configuration error, 3 numeric failure,
4 unidentifiable fit.  Errors print one JSON record per line on stderr.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import io_formats as iof
from . import workflows as wf
from .aberration_study import zernike_scan
from .calibration import (
    CalibrationError,
    ModelDomainError,
    UnidentifiableError,
    fit_calibration,
)
from .config import (
    ConfigError,
    RunConfig,
    apply_overrides,
    config_hash,
    load_config,
    parse_quantity,
)
from .fisher import NormalizationError, StepSensitivityError, fisher_curves_dh
from .fourier_optics import (
    AliasingError,
    ZernikeTerm,
    dh_phase_mask,
    holographic_lens_phase,
    zernike_phase,
)
from .localization import LocalizationError


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dhpsf",
        description="Double-helix PSF simulation, localization and calibration tools.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="config file; built-in defaults when omitted")
        sp.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config entry (repeatable)")
        sp.add_argument("--out", help="output directory (default from config)")
        sp.add_argument("--seed", type=int, help="override the run seed")

    p = sub.add_parser("mask", help="write the DH phase mask (PNG + raw float32)")
    common(p)
    p.add_argument("--na", type=float, help="numerical aperture override")
    p.add_argument("--lens-shift", metavar="QTY",
                   help="add a hologram lens displacing the focus by QTY (e.g. 2dz, 1.1um)")
    p.add_argument("--zernike", action="append", default=[], metavar="NOLL:W",
                   help="add an aberration term, W in waves RMS (e.g. 6:0.15wave)")
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("simulate", help="render a PSF stack over an axial range")
    common(p)
    p.add_argument("--na", type=float, help="numerical aperture override")
    p.add_argument("--z-half-range", default="4dz", metavar="QTY",
                   help="half-range of the axial scan (default 4dz)")
    p.add_argument("--z-steps", type=int, default=81)
    p.add_argument("--lens-shift", metavar="QTY",
                   help="render with a hologram lens for this focus displacement")
    p.add_argument("--zernike", action="append", default=[], metavar="NOLL:W")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("synth", help="synthesize camera frames of lattice ensembles")
    common(p)
    p.add_argument("--frames", type=int, default=1)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("localize", help="run the detection pipeline on frames")
    common(p)
    p.add_argument("--frames", required=True, metavar="FILE",
                   help="stack blob or 16-bit PNG/TIFF grayscale image")
    p.add_argument("--calibration", metavar="REPORT",
                   help="calibration report for the angle-to-z map")
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("calibrate",
                       help="fit the focal-shift angle model (from a CSV or synthetically)")
    common(p)
    p.add_argument("--pairs", metavar="CSV", help="angle-pair dataset to fit")
    p.add_argument("--delta-z", action="append", default=[], metavar="QTY",
                   help="focal displacement for the synthetic protocol (repeatable; "
                        "default -4dz -2dz 0dz 2dz 4dz)")
    p.add_argument("--repeats", type=int, default=4,
                   help="synthetic cycles per displacement")
    p.add_argument("--hop-down", type=float, default=0.0,
                   help="down-hop probability per synthetic exposure gap")
    p.add_argument("--hop-up", type=float, default=0.0)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("fisher", help="Fisher-information curves (DH and fundamental)")
    common(p)
    p.add_argument("--z-half-zr", type=float, default=2.0,
                   help="half-range of the z grid in Rayleigh ranges")
    p.add_argument("--steps", type=int, default=41)
    p.set_defaults(func=cmd_fisher)

    p = sub.add_parser("aberration-scan",
                       help="rotation curves under single Zernike aberrations")
    common(p)
    p.add_argument("--nolls", default="4,5,6,7,8,9,10,11,12,13",
                   help="comma-separated Noll indices")
    p.add_argument("--w-values", default="-0.15wave,-0.075wave,0wave,0.075wave,0.15wave",
                   help="comma-separated coefficients, waves RMS")
    p.add_argument("--z-half-planes", type=int, default=10)
    p.set_defaults(func=cmd_aberration_scan)

    return parser


def _resolve(args):
    """Config + output dir + provenance for a parsed command."""
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = list(args.set)
    if getattr(args, "na", None) is not None:
        overrides.append(f"train.na={args.na}")
    if args.seed is not None:
        overrides.append(f"run.seed={args.seed}")
    if args.out is not None:
        overrides.append(f"run.output_dir={args.out}")
    cfg = apply_overrides(cfg, overrides)
    outdir = Path(cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    provenance = {"config_hash": config_hash(cfg), "seed": cfg.seed}
    return cfg, outdir, provenance


def _parse_zernikes(items):
    terms = []
    for item in items:
        noll_text, sep, w_text = str(item).partition(":")
        if not sep:
            raise ConfigError(f"--zernike needs NOLL:W, got {item!r}")
        try:
            noll = int(noll_text)
        except ValueError:
            raise ConfigError(f"--zernike Noll index must be an integer, got {noll_text!r}")
        terms.append(ZernikeTerm(noll=noll, waves_rms=parse_quantity(w_text, "wave")))
    return terms


def _lens_focal(args, cfg, train):
    """Hologram focal length realizing the requested --lens-shift, or None."""
    if not getattr(args, "lens_shift", None):
        return None
    shift = parse_quantity(args.lens_shift, "length", plane_spacing=cfg.plane_spacing)
    if shift == 0:
        raise ConfigError("--lens-shift must be nonzero")
    return train.effective_focal ** 2 / shift


def cmd_mask(args):
    cfg, outdir, prov = _resolve(args)
    train, grid = cfg.to_train(), cfg.to_grid()
    phase = dh_phase_mask(grid, train.mask_waist(cfg.waist_ratio))
    f_hol = _lens_focal(args, cfg, train)
    if f_hol is not None:
        phase = phase + holographic_lens_phase(grid, f_hol, cfg.wavelength)
    terms = _parse_zernikes(args.zernike)
    if terms:
        phase = phase + zernike_phase(grid, train.pupil_radius_px, terms)
    R, _ = grid.rphi()
    phase = np.where(R <= train.pupil_radius_phys, np.mod(phase, 2 * np.pi), 0.0)
    iof.write_mask_png(outdir / "mask.png", phase, prov)
    iof.write_raw_matrix(outdir / "mask.raw", phase, grid.pitch)
    # the raw header is fixed at (magic, n, pitch); provenance rides in a sidecar
    meta_lines = iof._provenance_lines(prov) + [f"pitch_m = {repr(float(grid.pitch))}"]
    (outdir / "mask.raw.meta").write_text("\n".join(meta_lines) + "\n")
    print(f"wrote {outdir / 'mask.png'} and {outdir / 'mask.raw'} ({grid.n}x{grid.n})")
    return 0


def cmd_simulate(args):
    cfg, outdir, prov = _resolve(args)
    train = cfg.to_train()
    half = parse_quantity(args.z_half_range, "length", plane_spacing=cfg.plane_spacing)
    if args.z_steps < 1:
        raise ConfigError("--z-steps must be >= 1")
    z_values = np.linspace(-half, half, args.z_steps)
    stack = wf.simulate_stack(cfg, z_values, zernikes=_parse_zernikes(args.zernike) or None,
                              f_hol=_lens_focal(args, cfg, train))
    iof.write_stack(outdir / "stack.bin", stack, prov)
    print(f"wrote {outdir / 'stack.bin'}: {stack.z.size} frames of "
          f"{stack.n}x{stack.n}, pixel {stack.pixel_pitch * 1e9:.2f} nm")
    return 0


def _lattice_stack(cfg):
    """Stack planes matching the configured lattice's z sites."""
    nz = int(cfg.lattice_extent[2])
    k = (nz - 1) / 2.0
    z_values = (np.arange(nz) - k) * cfg.plane_spacing
    return wf.simulate_stack(cfg, z_values)


def cmd_synth(args):
    cfg, outdir, prov = _resolve(args)
    if args.frames < 1:
        raise ConfigError("--frames must be >= 1")
    stack = _lattice_stack(cfg)
    frames, atom_sets = wf.synthesize_ensembles(cfg, stack, args.frames, seed=cfg.seed)
    camera_pitch, _ = wf.pipeline_for(cfg, stack)
    from .fourier_optics import PSFStack

    blob = PSFStack(z=np.zeros(len(frames)), frames=frames, pixel_pitch=camera_pitch,
                    meta={"kind": "camera_frames", "frame_count": len(frames)})
    iof.write_stack(outdir / "frames.bin", blob, prov)
    for k, atoms in enumerate(atom_sets):
        iof.write_atoms_csv(outdir / f"atoms_{k:04d}.csv", atoms, prov)
    total = sum(len(a) for a in atom_sets)
    print(f"wrote {outdir / 'frames.bin'}: {len(frames)} frames, {total} atoms; "
          f"ground truth in atoms_*.csv")
    return 0


def cmd_localize(args):
    cfg, outdir, prov = _resolve(args)
    frames, pixel_pitch = iof.load_frames(args.frames)
    if pixel_pitch is None:
        pixel_pitch = cfg.camera_binning * wf.object_pixel_pitch(cfg)
    pipe = cfg.to_pipeline_config(pixel_pitch)
    law = None
    if args.calibration:
        report = iof.read_calibration_report(args.calibration)
        law = wf.law_from_fit(iof.calibration_result_from_report(report))
    frame_ids, detections = wf.localize_frames(frames, pipe, law=law)
    iof.write_detections_csv(outdir / "detections.csv", detections, frame_ids, prov)
    print(f"wrote {outdir / 'detections.csv'}: {len(detections)} detections "
          f"from {frames.shape[0]} frames")
    return 0


def cmd_calibrate(args):
    cfg, outdir, prov = _resolve(args)
    if args.pairs:
        dataset, d_z = iof.read_angle_pairs_csv(args.pairs)
    else:
        d_z = cfg.plane_spacing
        if args.delta_z:
            steps = [parse_quantity(q, "length", plane_spacing=d_z) for q in args.delta_z]
        else:
            steps = [n * d_z for n in (-4, -2, 0, 2, 4)]
        half_extent = (cfg.lattice_extent[2] - 1) / 2 * d_z
        hop_margin = 2 * d_z if (args.hop_down or args.hop_up) else 0.0
        n_planes = int(round((half_extent + hop_margin + max(abs(s) for s in steps)) / d_z))
        z_values = np.arange(-n_planes, n_planes + 1) * d_z
        stack = wf.simulate_stack(cfg, z_values)
        dataset = wf.three_image_cycles(cfg, stack, steps, repeats=args.repeats,
                                        seed=cfg.seed, hop=(args.hop_down, args.hop_up))
        iof.write_angle_pairs_csv(outdir / "angle_pairs.csv", dataset, d_z, prov)
    result = fit_calibration(dataset)
    iof.write_calibration_report(outdir / "calibration.txt", result, d_z=d_z,
                                 n_records=dataset.theta.size, provenance=prov)
    sigma_zr, sigma_alpha = result.parameter_uncertainties
    print(f"zR_eff = {result.zR_eff / d_z:.2f} dz +- {sigma_zr / d_z:.2f}, "
          f"alpha = {np.degrees(result.alpha):.1f} deg +- {np.degrees(sigma_alpha):.1f}, "
          f"mse = {result.mse:.2f} deg^2 ({dataset.theta.size} records)")
    print(f"wrote {outdir / 'calibration.txt'}")
    return 0


def cmd_fisher(args):
    cfg, outdir, prov = _resolve(args)
    geom = cfg.to_train().object_geometry(cfg.waist_ratio)
    if args.z_half_zr <= 0 or args.z_half_zr > 2.0:
        raise ConfigError("--z-half-zr must be in (0, 2] (curves are defined within 2 zR)")
    z_grid = np.linspace(-args.z_half_zr, args.z_half_zr, args.steps) * geom.zR
    dh_curve, fund_curve = fisher_curves_dh(geom, z_grid)
    iof.write_fisher_csv(outdir / "fisher_dh.csv", dh_curve, geom.zR, prov)
    iof.write_fisher_csv(outdir / "fisher_fundamental.csv", fund_curve, geom.zR, prov)
    print(f"wrote {outdir / 'fisher_dh.csv'} and {outdir / 'fisher_fundamental.csv'} "
          f"({args.steps} points, zR = {geom.zR * 1e6:.2f} um)")
    return 0


def cmd_aberration_scan(args):
    cfg, outdir, prov = _resolve(args)
    try:
        nolls = tuple(int(v) for v in args.nolls.split(","))
    except ValueError:
        raise ConfigError(f"--nolls must be comma-separated integers, got {args.nolls!r}")
    w_values = tuple(parse_quantity(v, "wave") for v in args.w_values.split(","))
    result = zernike_scan(
        nolls=nolls,
        W_values=w_values,
        na=cfg.na,
        plane_spacing=cfg.plane_spacing,
        z_half_planes=args.z_half_planes,
        modulation=cfg.modulation,
        out_size=cfg.out_size,
        train_kwargs={"wavelength": cfg.wavelength, "slm_pitch": cfg.slm_pitch,
                      "magnification": cfg.magnification},
    )
    iof.write_aberration_csv(outdir / "aberration_scan.csv", result.rows(), prov)
    shifts = ", ".join(
        f"{noll}: {np.degrees(result.delta_alpha[(noll, w)]):+.1f}"
        for (noll, w) in sorted(result.delta_alpha)
        if w == max(w_values)
    )
    print(f"wrote {outdir / 'aberration_scan.csv'}; "
          f"alpha shift at W = {max(w_values)} (deg): {shifts}")
    return 0


def _fail(code, kind, exc):
    record = {"error": kind, "message": str(exc), "exit_code": code}
    print(json.dumps(record), file=sys.stderr)
    return code


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail(2, "config", exc)
    except iof.FormatError as exc:
        return _fail(2, "format", exc)
    except FileNotFoundError as exc:
        return _fail(2, "config", exc)
    except UnidentifiableError as exc:
        return _fail(4, "unidentifiable", exc)
    except (AliasingError, NormalizationError, StepSensitivityError, CalibrationError,
            LocalizationError, ModelDomainError, FloatingPointError) as exc:
        return _fail(3, "numeric", exc)
    except ValueError as exc:
        return _fail(3, "numeric", exc)


if __name__ == "__main__":
    sys.exit(main())
