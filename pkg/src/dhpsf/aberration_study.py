"""Rotation-curve simulation campaigns: NA scans and Zernike aberration scans.

Each campaign renders PSF stacks through the diffraction pipeline, extracts
the lobe-pair orientation per frame with the line-integral angle estimator,
and summarizes the curves against the arctangent rotation law

    theta(z) = V arctan(z / zR) + alpha.

Angles are wrapped onto [-pi/2, pi/2); fits therefore always compare angles
on the circle mod pi.  Axial positions are object-space meters; the default
axial unit is the 532 nm plane spacing used throughout the package.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .fourier_optics import OpticalTrain, ZernikeTerm, dh_phase_mask, psf_stack
from .lgmodes import RotationLaw, wrap_half_pi
from .localization import DegenerateAngleError, radon_angle

__all__ = [
    "RotationCurve",
    "RotationFit",
    "ZernikeScanResult",
    "LOBE_AXIS_ASTIGMATISM_NOLL",
    "OBLIQUE_ASTIGMATISM_NOLL",
    "fit_rotation_curve",
    "fit_z_shift",
    "measure_rotation_curve",
    "na_scan",
    "zernike_scan",
]

log = logging.getLogger(__name__)

# With the canonical mask the two lobes sit on the x axis at focus, so the
# cos(2 phi) astigmatism (Noll 6) is aligned with the lobe axis and the
# sin(2 phi) term (Noll 5) is the oblique one.
LOBE_AXIS_ASTIGMATISM_NOLL = 6
OBLIQUE_ASTIGMATISM_NOLL = 5

DEFAULT_PLANE_SPACING = 532e-9


@dataclass
class RotationCurve:
    """Measured lobe orientation versus axial emitter position.

    theta entries are wrapped onto [-pi/2, pi/2); frames where the angle
    estimator flagged a degenerate (axis-free) pattern carry NaN and are
    marked in `degenerate`.
    """

    z: np.ndarray
    theta: np.ndarray
    meta: dict = field(default_factory=dict)
    degenerate: np.ndarray | None = None

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=float)
        self.theta = np.asarray(self.theta, dtype=float)
        if self.z.shape != self.theta.shape or self.z.ndim != 1:
            raise ValueError("z and theta must be equal-length 1D arrays")
        good = np.isfinite(self.theta)
        th = self.theta[good]
        if np.any(th < -np.pi / 2 - 1e-12) or np.any(th >= np.pi / 2 + 1e-12):
            raise ValueError("theta entries must lie in [-pi/2, pi/2)")
        if self.degenerate is None:
            self.degenerate = ~good
        else:
            self.degenerate = np.asarray(self.degenerate, dtype=bool)
            if self.degenerate.shape != self.z.shape:
                raise ValueError("degenerate flags must match z in length")

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.theta) & ~self.degenerate


@dataclass(frozen=True)
class RotationFit:
    """Arctangent-law fit of a rotation curve; rms is in degrees."""

    V: float
    zR: float
    alpha: float
    rms_deg: float
    fixed: tuple = ()

    @property
    def law(self) -> RotationLaw:
        return RotationLaw(V=self.V, zR=self.zR, alpha=self.alpha)


_PARAM_ORDER = ("V", "zR", "alpha")


def fit_rotation_curve(z, theta, fix: dict | None = None,
                       x0: dict | None = None) -> RotationFit:
    """Least-squares fit of theta(z) = V arctan(z/zR) + alpha, residuals mod pi.

    Any subset of {V, zR, alpha} can be pinned through `fix`; the rest are
    free.  Starting points come from `x0` where given, otherwise a small
    multi-start grid is tried and the lowest-cost solution wins (the free
    three-parameter problem has a shallow V-zR ridge on short z windows, so
    single-start fits can stall).
    """
    z = np.asarray(z, dtype=float)
    theta = np.asarray(theta, dtype=float)
    good = np.isfinite(z) & np.isfinite(theta)
    z, theta = z[good], theta[good]
    fix = dict(fix or {})
    x0 = dict(x0 or {})
    free = [p for p in _PARAM_ORDER if p not in fix]
    if not free:
        law = RotationLaw(V=fix["V"], zR=fix["zR"], alpha=fix["alpha"])
        r = wrap_half_pi(theta - law.theta(z))
        return RotationFit(rms_deg=float(np.degrees(np.sqrt(np.mean(r ** 2)))),
                           fixed=tuple(_PARAM_ORDER), **fix)
    if z.size < len(free) + 1:
        raise ValueError(f"need more than {len(free)} finite samples to fit {free}")

    zspan = float(np.max(np.abs(z))) or 1.0

    def residuals(x):
        p = dict(zip(free, x), **fix)
        pred = p["V"] * np.arctan(z / p["zR"]) + p["alpha"]
        return wrap_half_pi(theta - pred)

    v_starts = [x0["V"]] if "V" in x0 else ([fix["V"]] if "V" in fix else [2.0])
    zr_starts = [x0["zR"]] if "zR" in x0 else (
        [fix["zR"]] if "zR" in fix else [0.5 * zspan, 1.5 * zspan, 5.0 * zspan])
    a_starts = [x0["alpha"]] if "alpha" in x0 else (
        [fix["alpha"]] if "alpha" in fix else [-np.pi / 3, 0.0, np.pi / 3])
    lower = {"V": -np.inf, "zR": 1e-12, "alpha": -np.inf}
    scale = {"V": 1.0, "zR": zspan, "alpha": 0.5}
    best = None
    for v0 in v_starts:
        for z0 in zr_starts:
            for a0 in a_starts:
                start = {"V": v0, "zR": z0, "alpha": a0}
                res = least_squares(
                    residuals, x0=[start[p] for p in free],
                    bounds=([lower[p] for p in free], [np.inf] * len(free)),
                    x_scale=[scale[p] for p in free], max_nfev=400)
                if best is None or res.cost < best.cost:
                    best = res
    p = dict(zip(free, best.x), **fix)
    rms = float(np.degrees(np.sqrt(np.mean(best.fun ** 2))))
    return RotationFit(V=float(p["V"]), zR=float(p["zR"]),
                       alpha=float(wrap_half_pi(p["alpha"])), rms_deg=rms,
                       fixed=tuple(sorted(fix)))


def fit_z_shift(curve: RotationCurve, law: RotationLaw):
    """Best rigid z-translation of a rotation law onto a measured curve.

    Scans shifts coarsely over the curve's span, refines by least squares,
    and returns (shift, rms_deg): theta(z) ~ law.theta(z - shift).  Used to
    show that defocus only slides the curve along z.
    """
    m = curve.valid
    z, theta = curve.z[m], curve.theta[m]
    span = float(z.max() - z.min())

    def rms_of(s):
        r = wrap_half_pi(theta - law.theta(z - s))
        return float(np.sqrt(np.mean(r ** 2)))

    shifts = np.linspace(-span, span, 401)
    s0 = shifts[int(np.argmin([rms_of(s) for s in shifts]))]
    res = least_squares(lambda x: wrap_half_pi(theta - law.theta(z - x[0])),
                        x0=[s0], x_scale=[max(span / 10, 1e-9)], max_nfev=200)
    return float(res.x[0]), float(np.degrees(rms_of(float(res.x[0]))))


def measure_rotation_curve(train: OpticalTrain, z_list,
                           zernikes=None, modulation: str = "phase",
                           out_size: int = 512, pad_factor: int = 10,
                           grid=None, meta: dict | None = None) -> RotationCurve:
    """Render a PSF stack and extract the lobe angle of every frame."""
    grid = train.default_grid() if grid is None else grid
    mask = dh_phase_mask(grid, train.mask_waist()) if modulation == "phase" else None
    stack = psf_stack(train, grid, z_list, mask=mask, zernikes=zernikes,
                      pad_factor=pad_factor, out_size=out_size, modulation=modulation)
    theta = np.empty(stack.z.size)
    degen = np.zeros(stack.z.size, dtype=bool)
    for i, frame in enumerate(stack.frames):
        try:
            theta[i] = radon_angle(frame)
        except DegenerateAngleError as exc:
            log.debug("degenerate frame at z=%.3e m: %s", stack.z[i], exc)
            theta[i] = np.nan
            degen[i] = True
    info = {"na": train.na, "modulation": modulation, "out_size": out_size}
    info.update(meta or {})
    return RotationCurve(z=stack.z, theta=theta, meta=info, degenerate=degen)


def na_scan(na_values=(0.3, 0.45, 0.6), z_half_range: float = 4 * DEFAULT_PLANE_SPACING,
            steps: int = 81, modulation: str = "phase", out_size: int = 512,
            train_kwargs: dict | None = None, fit_fix: dict | None = None):
    """Rotation curves and arctangent fits across numerical apertures.

    Returns a list of (RotationCurve, RotationFit), one per NA, over `steps`
    axial positions spanning +-z_half_range.  The pupil radius scales with
    NA through the train defaults.  fit_fix pins fit parameters (e.g.
    {"zR": ...}); by default all three are free.
    """
    z_list = np.linspace(-z_half_range, z_half_range, steps)
    out = []
    for na in na_values:
        train = OpticalTrain(na=na, **(train_kwargs or {}))
        curve = measure_rotation_curve(train, z_list, modulation=modulation,
                                       out_size=out_size, meta={"na": na})
        fit = fit_rotation_curve(curve.z[curve.valid], curve.theta[curve.valid],
                                 fix=fit_fix)
        out.append((curve, fit))
    return out


@dataclass
class ZernikeScanResult:
    """Curves over (Noll index, coefficient W) plus z=0 angle shifts.

    delta_alpha maps (noll, W) to theta(0; W) - theta(0; 0) wrapped mod pi;
    the unaberrated reference curve is stored once under `reference`.
    """

    curves: dict  # (noll, W) -> RotationCurve
    reference: RotationCurve
    delta_alpha: dict  # (noll, W) -> radians
    na: float
    W_values: tuple

    def rows(self):
        """Long-format rows (noll, W, z_over_dz, theta_deg, degenerate)."""
        out = []
        for (noll, W), curve in sorted(self.curves.items()):
            dz_unit = curve.meta.get("plane_spacing", DEFAULT_PLANE_SPACING)
            for z, th, dg in zip(curve.z, curve.theta, curve.degenerate):
                out.append((noll, W, z / dz_unit,
                            math.degrees(th) if np.isfinite(th) else float("nan"),
                            int(dg)))
        return out


def _theta_at_zero(curve: RotationCurve) -> float:
    i = int(np.argmin(np.abs(curve.z)))
    return float(curve.theta[i])


def zernike_scan(nolls=tuple(range(4, 14)),
                 W_values=(-0.15, -0.075, 0.0, 0.075, 0.15),
                 na: float = 0.6, plane_spacing: float = DEFAULT_PLANE_SPACING,
                 z_half_planes: int = 10, modulation: str = "phase",
                 out_size: int = 512,
                 train_kwargs: dict | None = None) -> ZernikeScanResult:
    """Rotation curves under single Zernike aberrations of varying strength.

    Scans every Noll index in `nolls` over the coefficient list `W_values`
    (waves RMS; must be symmetric about zero and include zero) at integer
    plane positions -z_half_planes..+z_half_planes.  The W = 0 curve is
    rendered once and shared across terms.
    """
    Ws = tuple(float(w) for w in W_values)
    if 0.0 not in Ws:
        raise ValueError("W_values must include 0")
    if sorted(Ws) != sorted(-w for w in Ws):
        raise ValueError("W_values must be symmetric about 0")
    train = OpticalTrain(na=na, **(train_kwargs or {}))
    z_list = np.arange(-z_half_planes, z_half_planes + 1) * plane_spacing
    reference = measure_rotation_curve(
        train, z_list, modulation=modulation, out_size=out_size,
        meta={"noll": None, "W": 0.0, "plane_spacing": plane_spacing})
    theta0_ref = _theta_at_zero(reference)
    curves, delta_alpha = {}, {}
    for noll in nolls:
        for W in Ws:
            if W == 0.0:
                curves[(noll, 0.0)] = reference
                delta_alpha[(noll, 0.0)] = 0.0
                continue
            curve = measure_rotation_curve(
                train, z_list, zernikes=[ZernikeTerm(noll=noll, waves_rms=W)],
                modulation=modulation, out_size=out_size,
                meta={"noll": noll, "W": W, "plane_spacing": plane_spacing})
            curves[(noll, W)] = curve
            delta_alpha[(noll, W)] = float(wrap_half_pi(_theta_at_zero(curve) - theta0_ref))
    return ZernikeScanResult(curves=curves, reference=reference,
                             delta_alpha=delta_alpha, na=na, W_values=Ws)
