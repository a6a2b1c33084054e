"""Run configuration: flat key-value sections with explicit unit suffixes.

A config file looks like::

    schema_version = 1

    [train]
    wavelength = 852 nm
    na = 0.6
    slm_pitch = 10.4 um

    [pipeline]
    pair_gate_min = 0.9 um
    pair_gate_max = 2.8 um

Every physical quantity must carry a unit suffix (nm, um, mm, m, px, deg,
rad, dz, wave); bare numbers are accepted only for dimensionless fields.
Unknown keys or sections are rejected rather than ignored, so typos fail
loudly.  The sha256 of the canonical rendering serves as the provenance
config hash.
"""

import hashlib
import re
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .ensemble_synth import LatticeSpec, NoiseModel
from .fourier_optics import GridSpec, OpticalTrain
from .localization import PipelineConfig

SCHEMA_VERSION = 1

_LENGTH_UNITS = {"nm": 1e-9, "um": 1e-6, "mm": 1e-3, "m": 1.0}
_ANGLE_UNITS = {"deg": np.pi / 180.0, "rad": 1.0}


class ConfigError(ValueError):
    """Unparseable, unknown, or out-of-range configuration input."""


_QUANTITY_RE = re.compile(r"^\s*([-+]?[0-9.]+(?:[eE][-+]?[0-9]+)?)\s*([a-zA-Z]*)\s*$")


def parse_quantity(text, expect, plane_spacing=None):
    """Parse '852 nm' / '2dz' / '0.6' according to the expected dimension.

    expect is one of 'length', 'angle', 'pixels', 'wave', 'plain'.  Lengths
    additionally accept the dz suffix (multiples of the lattice plane
    spacing) when plane_spacing is supplied.  Dimensioned fields without a
    suffix are rejected.
    """
    m = _QUANTITY_RE.match(str(text))
    if not m:
        raise ConfigError(f"cannot parse quantity {text!r}")
    value, suffix = float(m.group(1)), m.group(2)

    if expect == "plain":
        if suffix:
            raise ConfigError(f"{text!r}: dimensionless field takes no unit")
        return value
    if not suffix:
        raise ConfigError(f"{text!r}: unit suffix required (e.g. nm, um, px, deg, dz)")
    if expect == "length":
        if suffix in _LENGTH_UNITS:
            return value * _LENGTH_UNITS[suffix]
        if suffix == "dz":
            if plane_spacing is None:
                raise ConfigError(f"{text!r}: dz units not resolvable in this field")
            return value * plane_spacing
        raise ConfigError(f"{text!r}: unknown length unit {suffix!r}")
    if expect == "angle":
        if suffix in _ANGLE_UNITS:
            return value * _ANGLE_UNITS[suffix]
        raise ConfigError(f"{text!r}: unknown angle unit {suffix!r}")
    if expect == "pixels":
        if suffix == "px":
            return value
        raise ConfigError(f"{text!r}: expected px units")
    if expect == "wave":
        if suffix in ("wave", "waves"):
            return value
        raise ConfigError(f"{text!r}: expected wave units")
    raise ValueError(f"unknown dimension kind {expect!r}")


@dataclass(frozen=True)
class RunConfig:
    """Everything a command run needs, resolved to SI values."""

    # optical train
    wavelength: float = 852e-9
    na: float = 0.6
    slm_pitch: float = 10.4e-6
    pupil_radius_px: float | None = None  # None: 230 px at NA 0.6, scaled with NA
    magnification: float = 50.0
    # grid
    grid_n: int = 1050
    pad_factor: int = 10
    out_size: int = 512
    # mask
    waist_ratio: float = 2.97
    modulation: str = "phase"
    # lattice
    lateral_spacing: float = 612e-9
    plane_spacing: float = 532e-9
    lattice_extent: tuple = (9, 9, 5)
    # noise
    mean_atoms: float = 6.0
    photons_per_atom: float = 2000.0
    background_mean: float = 20.0
    read_noise_sigma: float = 3.0
    em_excess_factor: float = 2.0
    # pipeline
    fov_n: int = 224
    camera_binning: int = 10
    lowpass_sigma_px: float = 0.8
    pair_gate: tuple = (0.9e-6, 2.8e-6)
    peak_threshold: float = 5.0
    peak_min_distance_px: float = 2.0
    crop_radius_px: int = 8
    post_select_tol: float = np.radians(2.0)
    # run
    seed: int = 0
    output_dir: str = "out"

    def __post_init__(self):
        if not 0 < self.na < 1:
            raise ConfigError(f"na must be in (0, 1), got {self.na}")
        for name in ("wavelength", "slm_pitch", "magnification", "waist_ratio",
                     "lateral_spacing", "plane_spacing", "photons_per_atom"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.modulation not in ("phase", "ideal"):
            raise ConfigError(f"modulation must be 'phase' or 'ideal', got {self.modulation!r}")
        if len(self.lattice_extent) != 3 or any(int(v) < 1 for v in self.lattice_extent):
            raise ConfigError(f"lattice extent needs three positive ints, got {self.lattice_extent}")
        if self.camera_binning < 1:
            raise ConfigError("camera_binning must be >= 1")

    # ---- factories for the module-level objects ----

    def to_train(self):
        return OpticalTrain(
            wavelength=self.wavelength,
            na=self.na,
            slm_pitch=self.slm_pitch,
            pupil_radius_px=self.pupil_radius_px,
            magnification=self.magnification,
        )

    def to_grid(self):
        return GridSpec(n=self.grid_n, pitch=self.slm_pitch)

    def to_lattice(self):
        return LatticeSpec(
            lateral_spacing=self.lateral_spacing,
            plane_spacing=self.plane_spacing,
            extent=tuple(int(v) for v in self.lattice_extent),
        )

    def to_noise_model(self, seed=None):
        return NoiseModel(
            photons_per_atom=self.photons_per_atom,
            background_mean=self.background_mean,
            gaussian_read_noise_sigma=self.read_noise_sigma,
            em_gain_excess_factor=self.em_excess_factor,
            rng_seed=self.seed if seed is None else seed,
        )

    def camera_pitch(self, sim_pitch):
        return sim_pitch * self.camera_binning

    def to_pipeline_config(self, pixel_pitch):
        """Pipeline knobs for frames with the given object-referred pitch."""
        cutoff = 1.0 / (2 * np.pi * self.lowpass_sigma_px * pixel_pitch)
        return PipelineConfig(
            pixel_pitch=pixel_pitch,
            lowpass_cutoff=cutoff,
            peak_min_distance=self.peak_min_distance_px,
            pair_gate=tuple(self.pair_gate),
            crop_radius=self.crop_radius_px,
            threshold=self.peak_threshold,
        )


# field name -> (section, key, dimension kind)
_SCHEMA = {
    "wavelength": ("train", "wavelength", "length"),
    "na": ("train", "na", "plain"),
    "slm_pitch": ("train", "slm_pitch", "length"),
    "pupil_radius_px": ("train", "pupil_radius", "pixels"),
    "magnification": ("train", "magnification", "plain"),
    "grid_n": ("grid", "n", "pixels"),
    "pad_factor": ("grid", "pad_factor", "plain"),
    "out_size": ("grid", "out_size", "pixels"),
    "waist_ratio": ("mask", "waist_ratio", "plain"),
    "modulation": ("mask", "modulation", "str"),
    "lateral_spacing": ("lattice", "lateral_spacing", "length"),
    "plane_spacing": ("lattice", "plane_spacing", "length"),
    "lattice_extent": ("lattice", "extent", "ints"),
    "mean_atoms": ("noise", "mean_atoms", "plain"),
    "photons_per_atom": ("noise", "photons_per_atom", "plain"),
    "background_mean": ("noise", "background_mean", "plain"),
    "read_noise_sigma": ("noise", "read_noise_sigma", "plain"),
    "em_excess_factor": ("noise", "em_excess_factor", "plain"),
    "fov_n": ("pipeline", "fov", "pixels"),
    "camera_binning": ("pipeline", "binning", "plain"),
    "lowpass_sigma_px": ("pipeline", "lowpass_sigma", "pixels"),
    "pair_gate": ("pipeline", None, None),  # split into two keys below
    "peak_threshold": ("pipeline", "threshold", "plain"),
    "peak_min_distance_px": ("pipeline", "peak_min_distance", "pixels"),
    "crop_radius_px": ("pipeline", "crop_radius", "pixels"),
    "post_select_tol": ("pipeline", "post_select_tol", "angle"),
    "seed": ("run", "seed", "plain"),
    "output_dir": ("run", "output_dir", "str"),
}

_INT_FIELDS = {"grid_n", "pad_factor", "out_size", "fov_n", "camera_binning",
               "crop_radius_px", "seed"}


def _render_value(name, value):
    """Format a field back into config-file text, units included."""
    _, _, kind = _SCHEMA[name]
    if value is None:
        return "default"
    # lengths and angles render in base units with full repr so that
    # parse(render(x)) == x bit-exactly (nm/deg conversions would not)
    if kind == "length":
        return f"{repr(float(value))} m"
    if kind == "angle":
        return f"{repr(float(value))} rad"
    if kind == "pixels":
        return f"{_strip_int(value)} px"
    if kind == "ints":
        return " ".join(str(int(v)) for v in value)
    if kind == "str":
        return str(value)
    return _strip_int(value)


def _strip_int(value):
    f = float(value)
    return str(int(f)) if f == int(f) else repr(f)


def canonical_text(config, include_run=True):
    """Deterministic config-file rendering; input for the config hash."""
    sections = {}
    for f in fields(config):
        name = f.name
        value = getattr(config, name)
        if name == "pair_gate":
            sections.setdefault("pipeline", []).append(
                f"pair_gate_min = {repr(float(value[0]))} m")
            sections.setdefault("pipeline", []).append(
                f"pair_gate_max = {repr(float(value[1]))} m")
            continue
        section, key, _ = _SCHEMA[name]
        sections.setdefault(section, []).append(f"{key} = {_render_value(name, value)}")
    order = ("train", "grid", "mask", "lattice", "noise", "pipeline", "run")
    if not include_run:
        order = order[:-1]
    lines = [f"schema_version = {SCHEMA_VERSION}", ""]
    for section in order:
        lines.append(f"[{section}]")
        lines.extend(sorted(sections[section]))
        lines.append("")
    return "\n".join(lines)


def config_hash(config):
    """Short sha256 digest of the canonical physics/pipeline rendering.

    The [run] section (seed, output directory) is excluded: the hash
    identifies what is computed, while the seed is reported separately in
    provenance headers.
    """
    return hashlib.sha256(canonical_text(config, include_run=False).encode()).hexdigest()[:12]


def save_config(path, config):
    with open(path, "w") as fh:
        fh.write(canonical_text(config))


def _parse_sections(text, source="config"):
    """Split config text into {(section, key): raw value} with checks."""
    entries = {}
    section = None
    schema_seen = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = key.strip(), value.strip()
        if section is None:
            if key != "schema_version":
                raise ConfigError(f"{source}:{lineno}: {key!r} appears before any [section]")
            schema_seen = value
            continue
        if (section, key) in entries:
            raise ConfigError(f"{source}:{lineno}: duplicate key {section}.{key}")
        entries[(section, key)] = value
    if schema_seen is None:
        raise ConfigError(f"{source}: missing schema_version")
    try:
        version = int(schema_seen)
    except ValueError:
        raise ConfigError(f"{source}: schema_version must be an integer, got {schema_seen!r}")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"{source}: schema_version {version} not supported (expected {SCHEMA_VERSION})")
    return entries


def parse_config(text, source="config"):
    """Parse config text into a RunConfig; unknown keys are errors."""
    entries = _parse_sections(text, source)
    lookup = {}
    for name, (section, key, kind) in _SCHEMA.items():
        if key is not None:
            lookup[(section, key)] = (name, kind)
    lookup[("pipeline", "pair_gate_min")] = ("pair_gate_min", "length")
    lookup[("pipeline", "pair_gate_max")] = ("pair_gate_max", "length")

    updates = {}
    gate = {}
    plane_spacing = RunConfig.plane_spacing
    if ("lattice", "plane_spacing") in entries:
        plane_spacing = parse_quantity(entries[("lattice", "plane_spacing")], "length")
    for (section, key), raw in entries.items():
        if (section, key) not in lookup:
            raise ConfigError(f"{source}: unknown key {section}.{key}")
        name, kind = lookup[(section, key)]
        if raw == "default":
            continue
        if kind == "str":
            updates[name] = raw
        elif kind == "ints":
            parts = raw.split()
            updates[name] = tuple(int(p) for p in parts)
        else:
            value = parse_quantity(raw, kind, plane_spacing=plane_spacing)
            if name in ("pair_gate_min", "pair_gate_max"):
                gate[name] = value
                continue
            if name in _INT_FIELDS:
                if value != int(value):
                    raise ConfigError(f"{source}: {section}.{key} must be an integer")
                value = int(value)
            updates[name] = value
    if gate:
        lo = gate.get("pair_gate_min", RunConfig.pair_gate[0])
        hi = gate.get("pair_gate_max", RunConfig.pair_gate[1])
        updates["pair_gate"] = (lo, hi)
    try:
        return RunConfig(**updates)
    except TypeError as exc:
        raise ConfigError(f"{source}: {exc}")


def load_config(path):
    with open(path) as fh:
        return parse_config(fh.read(), source=str(path))


def override(config, **updates):
    """replace() wrapper that keeps ConfigError semantics."""
    try:
        return replace(config, **updates)
    except TypeError as exc:
        raise ConfigError(str(exc))


def apply_overrides(config, items):
    """Apply 'section.key=value' text overrides (the CLI --set flag).

    Values use the same unit-suffixed syntax as config files; unknown keys
    and missing units are rejected just like there.
    """
    if not items:
        return config
    entries = _parse_sections(canonical_text(config), source="base config")
    for item in items:
        target, sep, raw = str(item).partition("=")
        section, dot, key = target.strip().partition(".")
        if not sep or not dot or not section or not key.strip():
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        entries[(section, key.strip())] = raw.strip()
    by_section = {}
    for (section, key), value in entries.items():
        by_section.setdefault(section, []).append(f"{key} = {value}")
    lines = [f"schema_version = {SCHEMA_VERSION}"]
    for section in sorted(by_section):
        lines.append(f"[{section}]")
        lines.extend(sorted(by_section[section]))
    return parse_config("\n".join(lines), source="override")
