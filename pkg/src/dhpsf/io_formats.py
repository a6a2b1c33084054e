"""Read/write helpers for masks, PSF stacks, and tabular results.

Binary formats
--------------
Phase masks travel either as 16-bit grayscale PNG (phase 0..2*pi mapped
onto 0..65535) or as a raw little-endian float32 matrix with a 16-byte
header (magic ``DHM1``, side length, pixel pitch).  PSF stacks are
multi-frame float32 blobs (magic ``DHS1``) with a human-readable
``key = value`` sidecar carrying the grid, the z list and the train
parameters.

Tabular formats
---------------
Plain CSV with a provenance header (tool version, config hash, seed) in
``#`` comment lines.  Nothing here writes timestamps or absolute paths:
identical inputs produce byte-identical files.
"""

import csv
import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image, ImageSequence
from PIL.PngImagePlugin import PngInfo

from .calibration import AnglePairDataset, CalibrationResult
from .ensemble_synth import AtomSet
from .fourier_optics import PSFStack
from .lgmodes import wrap_half_pi

MASK_MAGIC = b"DHM1"
STACK_MAGIC = b"DHS1"


class FormatError(ValueError):
    """Malformed or unrecognized file contents."""


def _tool_version():
    from dhpsf import __version__

    return __version__


def _provenance_lines(provenance=None):
    p = dict(provenance or {})
    return [
        f"# dhpsf {_tool_version()}",
        f"# config_hash: {p.get('config_hash', 'none')}",
        f"# seed: {p.get('seed', 'none')}",
    ]


def _fmt(x):
    """Deterministic cell formatting; floats keep full round-trip precision."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _write_csv(path, columns, rows, provenance=None, extra_header=()):
    with open(path, "w", newline="") as fh:
        for line in _provenance_lines(provenance):
            fh.write(line + "\n")
        for line in extra_header:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _read_csv(path):
    """Return (comment lines without '#', header row, data rows)."""
    comments, header, rows = [], None, []
    with open(path, newline="") as fh:
        for record in csv.reader(fh):
            if not record:
                continue
            if record[0].startswith("#"):
                comments.append(",".join(record).lstrip("# "))
                continue
            if header is None:
                header = record
            else:
                rows.append(record)
    if header is None:
        raise FormatError(f"{path}: no header row")
    return comments, header, rows


def _comment_value(comments, key):
    for line in comments:
        if line.startswith(key + ":"):
            return line[len(key) + 1 :].strip()
    return None


# ---------------------------------------------------------------------------
# phase masks


def write_mask_png(path, phase, provenance=None):
    """Save a phase image as 16-bit grayscale PNG, 0..2*pi -> 0..65535."""
    arr = np.mod(np.asarray(phase, dtype=float), 2 * np.pi)
    scaled = np.round(arr / (2 * np.pi) * 65535.0).astype(np.uint16)
    info = PngInfo()
    for line in _provenance_lines(provenance):
        info.add_text("provenance", line.lstrip("# "))
    Image.fromarray(scaled).save(Path(path), pnginfo=info)


def read_mask_png(path):
    """Load a 16-bit PNG written by write_mask_png; returns phase in [0, 2*pi)."""
    arr = np.asarray(Image.open(Path(path)), dtype=float)
    if arr.ndim != 2:
        raise FormatError(f"{path}: expected single-channel grayscale")
    return arr / 65535.0 * 2 * np.pi


def write_raw_matrix(path, values, pitch):
    """Raw float32 dump: magic, side length (uint32), pitch (float64), data.

    All fields little-endian; data row-major.  Only square matrices.
    """
    a = np.ascontiguousarray(values, dtype="<f4")
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise FormatError(f"square matrix required, got shape {a.shape}")
    header = MASK_MAGIC + struct.pack("<Id", a.shape[0], float(pitch))
    Path(path).write_bytes(header + a.tobytes())


def read_raw_matrix(path):
    """Inverse of write_raw_matrix; returns (values, pitch)."""
    blob = Path(path).read_bytes()
    if blob[:4] != MASK_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}")
    n, pitch = struct.unpack("<Id", blob[4:16])
    data = np.frombuffer(blob[16:], dtype="<f4")
    if data.size != n * n:
        raise FormatError(f"{path}: payload holds {data.size} values, header says {n}x{n}")
    return data.reshape(n, n).astype(float), pitch


# ---------------------------------------------------------------------------
# PSF / frame stacks


def _jsonable(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_stack(path, stack, provenance=None):
    """Multi-frame float32 blob plus a key = value sidecar at <path>.meta."""
    path = Path(path)
    frames = np.ascontiguousarray(stack.frames, dtype="<f4")
    n_frames, ny, nx = frames.shape
    header = STACK_MAGIC + struct.pack("<III", n_frames, ny, nx)
    path.write_bytes(header + frames.tobytes())

    lines = list(_provenance_lines(provenance))
    lines.append("format = dhpsf-stack-1")
    lines.append(f"frames = {n_frames}")
    lines.append(f"height = {ny}")
    lines.append(f"width = {nx}")
    lines.append(f"pixel_pitch_m = {repr(float(stack.pixel_pitch))}")
    lines.append(f"z_m = {json.dumps([float(z) for z in stack.z])}")
    lines.append(f"meta = {json.dumps(stack.meta, sort_keys=True, default=_jsonable)}")
    Path(str(path) + ".meta").write_text("\n".join(lines) + "\n")


def read_stack(path):
    """Inverse of write_stack; reconstructs the PSFStack from blob + sidecar."""
    path = Path(path)
    blob = path.read_bytes()
    if blob[:4] != STACK_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}")
    n_frames, ny, nx = struct.unpack("<III", blob[4:16])
    data = np.frombuffer(blob[16:], dtype="<f4")
    if data.size != n_frames * ny * nx:
        raise FormatError(f"{path}: payload size does not match header")
    frames = data.reshape(n_frames, ny, nx).astype(float)

    sidecar = Path(str(path) + ".meta")
    if not sidecar.exists():
        raise FormatError(f"{sidecar}: sidecar missing")
    fields = {}
    for line in sidecar.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        fields[key.strip()] = value.strip()
    for key in ("pixel_pitch_m", "z_m"):
        if key not in fields:
            raise FormatError(f"{sidecar}: missing {key}")
    z = np.asarray(json.loads(fields["z_m"]), dtype=float)
    if z.size != n_frames:
        raise FormatError(f"{sidecar}: z list length {z.size} != {n_frames} frames")
    meta = json.loads(fields.get("meta", "{}"))
    return PSFStack(z=z, frames=frames, pixel_pitch=float(fields["pixel_pitch_m"]), meta=meta)


def load_frames(path):
    """Read camera frames from a stack blob or a PNG/TIFF grayscale image.

    Returns (frames, pixel_pitch) where frames is (k, ny, nx) float and
    pixel_pitch is None for plain images (no embedded scale).
    """
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == STACK_MAGIC:
        stack = read_stack(path)
        return stack.frames, stack.pixel_pitch
    try:
        img = Image.open(path)
    except Exception as exc:
        raise FormatError(f"{path}: neither a stack blob nor a readable image ({exc})")
    frames = [np.asarray(page, dtype=float) for page in ImageSequence.Iterator(img)]
    for frame in frames:
        if frame.ndim != 2:
            raise FormatError(f"{path}: expected grayscale frames")
    return np.stack(frames), None


# ---------------------------------------------------------------------------
# tabular results


def write_detections_csv(path, detections, frame_ids=None, provenance=None):
    """Detections as CSV: frame_id, x, y, theta_deg, z, residual, flags."""
    dets = list(detections)
    if frame_ids is None:
        frame_ids = [0] * len(dets)
    frame_ids = list(frame_ids)
    if len(frame_ids) != len(dets):
        raise ValueError("frame_ids and detections must have equal length")
    rows = []
    for fid, d in zip(frame_ids, dets):
        rows.append(
            (
                int(fid),
                d.center[0],
                d.center[1],
                np.degrees(d.theta),
                d.z,
                d.fit_residual,
                d.method,
            )
        )
    _write_csv(
        path,
        ("frame_id", "x", "y", "theta_deg", "z", "residual", "flags"),
        rows,
        provenance,
    )


def read_detections_csv(path):
    """Rows from write_detections_csv as dicts; z is None where empty."""
    _, header, rows = _read_csv(path)
    expected = ["frame_id", "x", "y", "theta_deg", "z", "residual", "flags"]
    if header != expected:
        raise FormatError(f"{path}: unexpected columns {header}")
    out = []
    for rec in rows:
        out.append(
            {
                "frame_id": int(rec[0]),
                "x": float(rec[1]),
                "y": float(rec[2]),
                "theta_deg": float(rec[3]),
                "z": float(rec[4]) if rec[4] else None,
                "residual": float(rec[5]),
                "flags": rec[6],
            }
        )
    return out


def write_atoms_csv(path, atoms, provenance=None):
    """Ground-truth atom positions (and lattice indices when available)."""
    rows = []
    for i, pos in enumerate(atoms.positions):
        idx = atoms.indices[i] if atoms.indices is not None else (None, None, None)
        rows.append((pos[0], pos[1], pos[2], idx[0], idx[1], idx[2]))
    _write_csv(path, ("x", "y", "z", "i", "j", "k"), rows, provenance)


def read_atoms_csv(path):
    """Inverse of write_atoms_csv; lattice association is not recoverable."""
    _, header, rows = _read_csv(path)
    if header != ["x", "y", "z", "i", "j", "k"]:
        raise FormatError(f"{path}: unexpected columns {header}")
    positions = np.array([[float(v) for v in rec[:3]] for rec in rows], dtype=float)
    positions = positions.reshape(-1, 3)
    if rows and all(rec[3] != "" for rec in rows):
        indices = np.array([[int(v) for v in rec[3:6]] for rec in rows], dtype=int)
    else:
        indices = None
    return AtomSet(positions=positions, indices=indices)


def write_angle_pairs_csv(path, dataset, d_z, provenance=None):
    """Angle-pair dataset with delta_z recorded in units of the plane spacing."""
    rows = [
        (dz / d_z, np.degrees(t), np.degrees(ts))
        for t, ts, dz in zip(dataset.theta, dataset.theta_shifted, dataset.delta_z)
    ]
    _write_csv(
        path,
        ("group_delta_z_in_dz", "theta_deg", "theta_shifted_deg"),
        rows,
        provenance,
        extra_header=(f"d_z_m: {repr(float(d_z))}",),
    )


def read_angle_pairs_csv(path):
    """Returns (AnglePairDataset, d_z); requires the d_z_m header line."""
    comments, header, rows = _read_csv(path)
    if header != ["group_delta_z_in_dz", "theta_deg", "theta_shifted_deg"]:
        raise FormatError(f"{path}: unexpected columns {header}")
    d_z_text = _comment_value(comments, "d_z_m")
    if d_z_text is None:
        raise FormatError(f"{path}: missing '# d_z_m:' header line")
    d_z = float(d_z_text)
    theta = np.radians([float(r[1]) for r in rows])
    theta_shifted = np.radians([float(r[2]) for r in rows])
    delta_z = np.array([float(r[0]) for r in rows]) * d_z
    dataset = AnglePairDataset(
        theta=np.atleast_1d(theta),
        theta_shifted=np.atleast_1d(theta_shifted),
        delta_z=np.atleast_1d(delta_z),
    )
    return dataset, d_z


def write_fisher_csv(path, curve, zR, provenance=None):
    """Fisher information curve, z expressed in Rayleigh ranges."""
    rows = [
        (z / zR, ix, iy, iz)
        for z, ix, iy, iz in zip(curve.z_grid, curve.I_x, curve.I_y, curve.I_z)
    ]
    extra = (f"label: {curve.label}",) if curve.label else ()
    _write_csv(path, ("z_over_zR", "I_x", "I_y", "I_z"), rows, provenance, extra)


def read_fisher_csv(path):
    """Returns dict with arrays z_over_zR, I_x, I_y, I_z and the label."""
    comments, header, rows = _read_csv(path)
    if header != ["z_over_zR", "I_x", "I_y", "I_z"]:
        raise FormatError(f"{path}: unexpected columns {header}")
    cols = np.array([[float(v) for v in rec] for rec in rows], dtype=float)
    cols = cols.reshape(-1, 4)
    return {
        "z_over_zR": cols[:, 0],
        "I_x": cols[:, 1],
        "I_y": cols[:, 2],
        "I_z": cols[:, 3],
        "label": _comment_value(comments, "label") or "",
    }


def write_aberration_csv(path, rows, provenance=None):
    """Long-format Zernike scan: noll, W, z_over_dz, theta_deg, flags.

    rows: iterable of (noll, W, z_over_dz, theta_deg, degenerate_flag).
    """
    out = []
    for noll, w, z_dz, theta_deg, degenerate in rows:
        out.append((int(noll), w, z_dz, theta_deg, "degenerate" if degenerate else ""))
    _write_csv(path, ("noll", "W", "z_over_dz", "theta_deg", "flags"), out, provenance)


def read_aberration_csv(path):
    _, header, rows = _read_csv(path)
    if header != ["noll", "W", "z_over_dz", "theta_deg", "flags"]:
        raise FormatError(f"{path}: unexpected columns {header}")
    out = []
    for rec in rows:
        out.append(
            {
                "noll": int(rec[0]),
                "W": float(rec[1]),
                "z_over_dz": float(rec[2]),
                "theta_deg": float(rec[3]) if rec[3] else None,
                "flags": rec[4],
            }
        )
    return out


def write_calibration_report(path, result, d_z=None, n_records=None, provenance=None):
    """Flat key = value report of a calibration fit."""
    sigma_zr, sigma_alpha = result.parameter_uncertainties
    lines = list(_provenance_lines(provenance))
    lines.append(f"zR_eff_m = {repr(float(result.zR_eff))}")
    if d_z is not None:
        lines.append(f"zR_eff_dz = {repr(float(result.zR_eff / d_z))}")
    lines.append(f"alpha_deg = {repr(float(np.degrees(result.alpha)))}")
    lines.append(f"V = {repr(float(result.V))}")
    lines.append(f"mse_deg2 = {repr(float(result.mse))}")
    lines.append(f"sigma_zR_m = {repr(float(sigma_zr))}")
    lines.append(f"sigma_alpha_deg = {repr(float(np.degrees(sigma_alpha)))}")
    if n_records is not None:
        lines.append(f"n_records = {int(n_records)}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_calibration_report(path):
    """Parse a report back into a dict of floats (n_records as int)."""
    out = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        key = key.strip()
        out[key] = int(value) if key == "n_records" else float(value)
    return out


def calibration_result_from_report(report):
    """Rebuild a CalibrationResult from a parsed report dict."""
    return CalibrationResult(
        zR_eff=report["zR_eff_m"],
        alpha=wrap_half_pi(np.radians(report["alpha_deg"])),
        V=report.get("V", 2.0),
        mse=report["mse_deg2"],
        parameter_uncertainties=(
            report["sigma_zR_m"],
            np.radians(report["sigma_alpha_deg"]),
        ),
    )
