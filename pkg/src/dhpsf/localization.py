"""Detection pipeline: camera frames to 3D emitter positions.

The stages follow the usual single-emitter recipe: subtract background and
low-pass filter, find local maxima, pair peaks that look like the two lobes
of one double-helix pattern, fit the pair with two elliptical Gaussians, and
convert the lobe-axis angle into an axial position through a RotationLaw.
A nonparametric Radon-transform estimator is provided alongside the Gaussian
fit for patterns whose lobes are distorted.

Coordinates: frames are indexed [row, col] = [y, x]; angles are measured
from the +x axis towards +y and reported on [-pi/2, pi/2) since a lobe pair
only defines its axis modulo a half turn.  Detection positions are
object-referred lengths (pixel index times the configured pixel pitch).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter, map_coordinates, maximum_filter
from scipy.optimize import least_squares

from .lgmodes import RotationLaw, wrap_half_pi

__all__ = [
    "Peak",
    "Detection",
    "PipelineConfig",
    "LocalizationError",
    "FitConvergenceError",
    "DegenerateFitError",
    "DegenerateAngleError",
    "OutOfBranchError",
    "preprocess",
    "find_peaks",
    "pair_peaks",
    "fit_double_gaussian",
    "radon_angle",
    "z_from_angle",
    "localize_frame",
]

log = logging.getLogger(__name__)


class LocalizationError(RuntimeError):
    """Base class for recoverable per-detection failures."""


class FitConvergenceError(LocalizationError):
    """The double-Gaussian fit hit its iteration cap without converging."""


class DegenerateFitError(LocalizationError):
    """The double-Gaussian fit collapsed onto a single lobe."""


class DegenerateAngleError(LocalizationError):
    """The Radon profile has no sufficiently unique maximum."""


class OutOfBranchError(LocalizationError):
    """Angle falls outside the unambiguous branch of the rotation law."""


@dataclass(frozen=True)
class Peak:
    """A local maximum at subpixel position (x, y) in frame pixels."""

    x: float
    y: float
    amplitude: float


@dataclass
class Detection:
    """One localized emitter.

    center and lobe_separation are object-referred lengths (meters); theta
    is the lobe-axis angle in radians on [-pi/2, pi/2).  z is filled in by
    localize_frame once a rotation law is available.
    """

    center: tuple
    theta: float
    lobe_separation: float
    fit_residual: float
    method: str
    z: float | None = None

    def __post_init__(self):
        if not -np.pi / 2 <= self.theta < np.pi / 2:
            raise ValueError(f"theta {self.theta} outside [-pi/2, pi/2)")


@dataclass(frozen=True)
class PipelineConfig:
    """Knobs of the detection pipeline.

    pixel_pitch      object-referred pixel size of the frames (m)
    lowpass_cutoff   Gaussian low-pass cutoff, cycles/m; the filter response
                     is exp(-1/2) at this frequency
    peak_min_distance  minimum separation between reported maxima (px)
    pair_gate        (d_min, d_max) admissible lobe separations (m)
    crop_radius      half-size of the square fit window (px)
    threshold        detection threshold in units of the robust noise sigma
    """

    pixel_pitch: float
    lowpass_cutoff: float
    # lobes sit ~5 px apart at 311 nm pixels; a larger exclusion window
    # swallows the dimmer lobe when the separation rounds to (3, 3) px
    peak_min_distance: float = 2.0
    pair_gate: tuple = (0.9e-6, 2.8e-6)
    crop_radius: int = 8
    threshold: float = 5.0

    def __post_init__(self):
        d_min, d_max = self.pair_gate
        if not 0 < d_min < d_max:
            raise ValueError(f"pair gate must satisfy 0 < d_min < d_max, got {self.pair_gate}")
        if 2 * self.crop_radius * self.pixel_pitch < d_max:
            raise ValueError("crop_radius does not cover the pair gate")

    @property
    def lowpass_sigma_px(self) -> float:
        """Spatial sigma of the low-pass kernel, in pixels."""
        return 1.0 / (2.0 * np.pi * self.lowpass_cutoff * self.pixel_pitch)


# ---------------------------------------------------------------------------
# Stage 1: conditioning and peak finding

def preprocess(frame, config: PipelineConfig):
    """Mean-subtract and Gaussian low-pass a camera frame."""
    frame = np.asarray(frame, dtype=float)
    if not np.all(np.isfinite(frame)):
        raise ValueError("frame contains non-finite values")
    out = frame - frame.mean()
    return gaussian_filter(out, config.lowpass_sigma_px, mode="nearest")


def _quadratic_refine(img, r, c):
    """Subpixel offset of a maximum from a 3-point parabola along each axis."""
    def peak_1d(m, z, p):
        denom = m - 2 * z + p
        if denom >= 0:
            return 0.0
        return float(np.clip(0.5 * (m - p) / denom, -0.5, 0.5))

    dy = peak_1d(img[r - 1, c], img[r, c], img[r + 1, c])
    dx = peak_1d(img[r, c - 1], img[r, c], img[r, c + 1])
    return dx, dy


def find_peaks(filtered, config: PipelineConfig):
    """Local maxima above threshold, separated by >= peak_min_distance px.

    The threshold is config.threshold times a robust noise scale (1.4826
    times the median absolute deviation of the filtered frame).  Positions
    are refined to subpixel by a per-axis quadratic fit; maxima on the
    one-pixel border are dropped.  Returns peaks sorted by amplitude,
    strongest first.
    """
    img = np.asarray(filtered, dtype=float)
    sigma = 1.4826 * np.median(np.abs(img - np.median(img)))
    level = config.threshold * sigma
    size = 2 * int(math.ceil(config.peak_min_distance)) + 1
    is_max = (img == maximum_filter(img, size=size)) & (img > level)
    is_max[0, :] = is_max[-1, :] = False
    is_max[:, 0] = is_max[:, -1] = False
    peaks = []
    for r, c in zip(*np.nonzero(is_max)):
        dx, dy = _quadratic_refine(img, r, c)
        peaks.append(Peak(x=c + dx, y=r + dy, amplitude=float(img[r, c])))
    peaks.sort(key=lambda p: -p.amplitude)
    return peaks


def pair_peaks(peaks, config: PipelineConfig):
    """Group peaks into unambiguous lobe pairs.

    Every pair whose separation falls inside the configured gate is a
    candidate; a pair is kept only if neither member appears in any other
    candidate pair.  Peaks with several gate-passing partners cannot be
    attributed to a single emitter and are discarded wholesale.
    """
    d_min, d_max = config.pair_gate
    n = len(peaks)
    candidates = []
    uses = np.zeros(n, dtype=int)
    for i in range(n):
        for j in range(i + 1, n):
            d = math.hypot(peaks[i].x - peaks[j].x, peaks[i].y - peaks[j].y)
            d *= config.pixel_pitch
            if d_min <= d <= d_max:
                candidates.append((i, j))
                uses[i] += 1
                uses[j] += 1
    return [(peaks[i], peaks[j]) for i, j in candidates
            if uses[i] == 1 and uses[j] == 1]


# ---------------------------------------------------------------------------
# Stage 2: lobe-pair fitting

def _double_gaussian(params, X, Y):
    out = np.full(X.shape, params[-1])
    for k in (0, 5):
        a, x0, y0, sx, sy = params[k:k + 5]
        out = out + a * np.exp(-0.5 * (((X - x0) / sx) ** 2 + ((Y - y0) / sy) ** 2))
    return out


def fit_double_gaussian(frame, pair, config: PipelineConfig) -> Detection:
    """Fit a lobe pair with two elliptical Gaussians plus a constant.

    The crop is centered on the midpoint of the two peaks.  Raises
    FitConvergenceError when the iteration cap is hit and DegenerateFitError
    when the fitted lobes collapse onto each other (separation below half
    the lower gate edge).
    """
    frame = np.asarray(frame, dtype=float)
    p1, p2 = pair
    cx = 0.5 * (p1.x + p2.x)
    cy = 0.5 * (p1.y + p2.y)
    r = int(config.crop_radius)
    c0, r0 = int(round(cx)), int(round(cy))
    if (r0 - r < 0 or c0 - r < 0 or r0 + r + 1 > frame.shape[0]
            or c0 + r + 1 > frame.shape[1]):
        raise LocalizationError("fit window extends beyond the frame")
    crop = frame[r0 - r:r0 + r + 1, c0 - r:c0 + r + 1]
    Y, X = np.mgrid[r0 - r:r0 + r + 1, c0 - r:c0 + r + 1].astype(float)

    sig0 = max(1.0, 0.25 * math.hypot(p1.x - p2.x, p1.y - p2.y))
    x0 = [p1.amplitude, p1.x, p1.y, sig0, sig0,
          p2.amplitude, p2.x, p2.y, sig0, sig0,
          float(np.median(crop))]
    lo = [0, c0 - r, r0 - r, 0.3, 0.3] * 2 + [-np.inf]
    hi = [np.inf, c0 + r, r0 + r, 4 * r, 4 * r] * 2 + [np.inf]

    def resid(p):
        return (_double_gaussian(p, X, Y) - crop).ravel()

    sol = least_squares(resid, x0, bounds=(lo, hi), max_nfev=400)
    if sol.status == 0:
        raise FitConvergenceError("double-Gaussian fit hit the iteration cap")
    a1, x1, y1 = sol.x[0], sol.x[1], sol.x[2]
    a2, x2, y2 = sol.x[5], sol.x[6], sol.x[7]
    sep_px = math.hypot(x2 - x1, y2 - y1)
    d_min = config.pair_gate[0] / config.pixel_pitch
    if sep_px < 0.5 * d_min:
        raise DegenerateFitError(
            f"fitted lobes {sep_px:.2f} px apart, below half the gate minimum")
    theta = float(wrap_half_pi(math.atan2(y2 - y1, x2 - x1)))
    rms = float(np.sqrt(np.mean(sol.fun ** 2)))
    peak = max(a1, a2) + sol.x[10]
    return Detection(
        center=(0.5 * (x1 + x2) * config.pixel_pitch,
                0.5 * (y1 + y2) * config.pixel_pitch),
        theta=theta,
        lobe_separation=sep_px * config.pixel_pitch,
        fit_residual=rms / peak if peak > 0 else rms,
        method="double-gaussian",
    )


# ---------------------------------------------------------------------------
# Stage 2': nonparametric angle

def radon_angle(frame, center=None, coarse_step_deg=0.25, fine_step_deg=0.01,
                min_contrast=0.01):
    """Lobe-axis angle from the zero-displacement Radon maximum.

    The line integral through `center` (default: intensity centroid) is
    sampled with linear interpolation at one-pixel steps out to the largest
    radius that stays inside the frame, for every projection angle on a
    coarse grid; the best angle is then refined on a fine grid (default
    0.01 deg).  Returns radians on [-pi/2, pi/2).

    Raises DegenerateAngleError when the coarse profile is flat to within
    `min_contrast` (relative), e.g. for azimuthally symmetric input.
    """
    img = np.asarray(frame, dtype=float)
    ny, nx = img.shape
    if center is None:
        total = img.sum()
        if total <= 0:
            raise DegenerateAngleError("frame has no positive flux")
        ys, xs = np.mgrid[0:ny, 0:nx]
        center = ((xs * img).sum() / total, (ys * img).sum() / total)
    cx, cy = center
    radius = int(min(cx, cy, nx - 1 - cx, ny - 1 - cy))
    if radius < 2:
        raise ValueError("center too close to the frame edge")
    s = np.arange(-radius, radius + 1)

    def profile(angles):
        rows = cy + np.outer(np.sin(angles), s)
        cols = cx + np.outer(np.cos(angles), s)
        vals = map_coordinates(img, [rows.ravel(), cols.ravel()], order=1)
        return vals.reshape(rows.shape).sum(axis=1)

    coarse = np.deg2rad(np.arange(-90.0, 90.0, coarse_step_deg))
    prof = profile(coarse)
    vmax, vmin = prof.max(), prof.min()
    if vmax <= 0 or (vmax - vmin) < min_contrast * abs(vmax):
        raise DegenerateAngleError(
            f"Radon profile contrast {(vmax - vmin) / max(abs(vmax), 1e-300):.2e} "
            f"below {min_contrast}")
    t0 = coarse[int(np.argmax(prof))]
    halfwin = 3.0 * coarse_step_deg
    fine = t0 + np.deg2rad(np.arange(-halfwin, halfwin + 1e-12, fine_step_deg))
    theta = fine[int(np.argmax(profile(fine)))]
    return float(wrap_half_pi(theta))


# ---------------------------------------------------------------------------
# Stage 3: angle to axial position

def z_from_angle(theta, law: RotationLaw):
    """Invert the rotation law: z = zR tan((theta - alpha)/V).

    theta - alpha is wrapped onto [-pi/2, pi/2) first.  Raises
    OutOfBranchError if the wrapped angle still falls outside the principal
    branch of the tangent (only possible for |V| < 1).
    """
    arg = wrap_half_pi(np.asarray(theta, dtype=float) - law.alpha) / law.V
    if np.any(np.abs(arg) >= np.pi / 2):
        raise OutOfBranchError("angle outside the unambiguous branch")
    return law.zR * np.tan(arg)


def localize_frame(frame, config: PipelineConfig, law: RotationLaw | None = None):
    """Run the full pipeline on one frame.

    Returns a list of Detection with object-referred (x, y) and, when a
    rotation law is given, z.  Pairs whose fit fails are skipped (logged at
    debug level); everything else is returned.
    """
    filtered = preprocess(frame, config)
    peaks = find_peaks(filtered, config)
    detections = []
    for pair in pair_peaks(peaks, config):
        try:
            det = fit_double_gaussian(frame, pair, config)
        except LocalizationError as err:
            log.debug("pair at (%.1f, %.1f) px rejected: %s",
                      0.5 * (pair[0].x + pair[1].x),
                      0.5 * (pair[0].y + pair[1].y), err)
            continue
        if law is not None:
            try:
                det.z = float(z_from_angle(det.theta, law))
            except OutOfBranchError as err:
                log.debug("detection at %s dropped: %s", det.center, err)
                continue
        detections.append(det)
    return detections
