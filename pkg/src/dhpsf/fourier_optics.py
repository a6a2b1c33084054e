"""Scalar Fourier-optics model of the phase-mask imaging train.

The model follows the single-transform picture of a 4f-style microscope with
a reflective phase mask in the pupil: a pupil-plane field (hard aperture,
radiometric apodization, programmed phase) is Fourier-transformed to the
camera plane, and defocus is applied as paraxial angular-spectrum propagation
of the image-plane field.

Geometry conventions used throughout:

* Grids are square with the optical axis on pixel (n//2, n//2); row index is
  the y coordinate, column index is x.
* The pupil-to-image transform zero-pads the pupil matrix ``pad_factor``
  times per side; the image-plane pixel is lambda f_tube / d_padded.  Image
  fields are stored *object-referred*: their pitch is that pixel divided by
  the lateral magnification, i.e. lambda (a_phys/NA) / d_padded, so all
  downstream analysis works directly in emitter coordinates.  Propagating an
  object-referred field by dz with the paraxial kernel is algebraically
  identical to propagating the camera-side field by M^2 dz.
* An emitter displaced by +z has its image displaced towards the tube lens,
  so the field recorded at the fixed camera plane is the in-focus field
  propagated by -z (object-referred).  The recorded intensity additionally
  carries one parity flip from the odd number of reflections in the pupil
  path; ``psf_stack`` applies both, which makes the observed lobe axis obey
  theta(z) = V arctan(z/zR) + alpha with V = +2 for the canonical mask and
  puts the focus of a positive-f holographic lens at +Delta z.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import czt

from .lgmodes import BeamGeometry, LGSuperposition, superposition_field

__all__ = [
    "GridSpec",
    "ComplexField",
    "OpticalTrain",
    "ZernikeTerm",
    "PSFStack",
    "AliasingError",
    "noll_to_nm",
    "zernike_value",
    "zernike_phase",
    "dh_phase_mask",
    "holographic_lens_phase",
    "apodization",
    "pupil_field",
    "ideal_pupil_field",
    "propagate_to_image",
    "fresnel_propagate",
    "psf_stack",
    "dh_fidelity",
    "focal_shift",
    "flip_about_center",
]


class AliasingError(ValueError):
    """Raised when a propagation step would alias the quadratic kernel."""


@dataclass(frozen=True)
class GridSpec:
    """Square sampling grid: n x n pixels of physical size `pitch` (m)."""

    n: int
    pitch: float

    def __post_init__(self):
        if self.n < 4:
            raise ValueError(f"grid too small: n = {self.n}")
        if self.pitch <= 0:
            raise ValueError(f"pitch must be positive, got {self.pitch}")

    @property
    def extent(self) -> float:
        """Physical side length n * pitch."""
        return self.n * self.pitch

    def coords(self):
        """1D centered coordinate axis (optical axis at index n//2)."""
        return (np.arange(self.n) - self.n // 2) * self.pitch

    def xy(self):
        c = self.coords()
        return np.meshgrid(c, c)  # X varies along columns, Y along rows

    def rphi(self):
        X, Y = self.xy()
        return np.hypot(X, Y), np.arctan2(Y, X)


@dataclass
class ComplexField:
    """Sampled complex scalar field on a GridSpec.

    plane is "pupil" or "image"; image-plane fields are object-referred
    (see module docstring).  z_offset records accumulated propagation.
    """

    grid: GridSpec
    values: np.ndarray
    plane: str = "pupil"
    z_offset: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != (self.grid.n, self.grid.n):
            raise ValueError(
                f"field shape {self.values.shape} does not match grid n = {self.grid.n}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite values")

    def power(self) -> float:
        """Total power sum |E|^2 * pitch^2."""
        return float(np.sum(np.abs(self.values) ** 2)) * self.grid.pitch ** 2

    def intensity(self) -> np.ndarray:
        return np.abs(self.values) ** 2


@dataclass(frozen=True)
class OpticalTrain:
    """Imaging-train parameters.

    Only two combinations of the focal lengths enter the model: the
    object-side Fourier focal scale F = f_obj f2 / f1 (fixed by the pupil
    radius: a_phys = NA * F) and the lateral magnification
    M = (f1/f_obj)(f_tube/f3).  The train is therefore specified by the
    numerical aperture, the pupil radius on the mask grid and M; explicit
    focal lengths, when given, are checked for consistency (which requires
    f2 = f3, the symmetric relay around the mask).
    """

    wavelength: float = 852e-9
    na: float = 0.6
    slm_pitch: float = 10.4e-6
    pupil_radius_px: float | None = None
    magnification: float = 50.0
    focal_lengths: dict | None = None  # optional: f_obj, f1, f2, f3, f_tube

    # pupil radius at the reference aperture, scaled linearly with NA
    _REF_RADIUS_PX = 230.0
    _REF_NA = 0.6

    def __post_init__(self):
        if not (0 < self.na < 1):
            raise ValueError(f"NA must be in (0, 1), got {self.na}")
        if self.wavelength <= 0 or self.slm_pitch <= 0 or self.magnification <= 0:
            raise ValueError("wavelength, slm_pitch and magnification must be positive")
        if self.pupil_radius_px is None:
            object.__setattr__(
                self, "pupil_radius_px", self._REF_RADIUS_PX * self.na / self._REF_NA)
        if self.pupil_radius_px <= 0:
            raise ValueError("pupil radius must be positive")
        if self.focal_lengths is not None:
            f = self.focal_lengths
            missing = {"f_obj", "f1", "f2", "f3", "f_tube"} - set(f)
            if missing:
                raise ValueError(f"focal_lengths missing {sorted(missing)}")
            F = f["f_obj"] * f["f2"] / f["f1"]
            if abs(F - self.effective_focal) > 0.01 * self.effective_focal:
                raise ValueError(
                    "focal lengths inconsistent with pupil radius: "
                    f"f_obj*f2/f1 = {F:.6g} m vs a_phys/NA = {self.effective_focal:.6g} m")
            if abs(f["f2"] - f["f3"]) > 1e-9 * f["f2"]:
                raise ValueError("relay around the mask must be symmetric (f2 = f3)")
            M = (f["f1"] / f["f_obj"]) * (f["f_tube"] / f["f3"])
            if abs(M - self.magnification) > 0.01 * self.magnification:
                raise ValueError(
                    f"focal lengths give magnification {M:.4g}, train says {self.magnification:.4g}")

    @property
    def pupil_radius_phys(self) -> float:
        """Aperture radius on the mask, meters."""
        return self.pupil_radius_px * self.slm_pitch

    @property
    def effective_focal(self) -> float:
        """Object-side Fourier focal scale F = f_obj f2/f1 = a_phys / NA."""
        return self.pupil_radius_phys / self.na

    @property
    def f_tube(self) -> float:
        return self.magnification * self.effective_focal

    @property
    def axial_magnification(self) -> float:
        return self.magnification ** 2

    def default_grid(self, n: int = 1050) -> GridSpec:
        return GridSpec(n=n, pitch=self.slm_pitch)

    def mask_waist(self, pupil_to_waist: float = 2.97) -> float:
        """Gaussian waist on the mask for a given a/w0 ratio, meters."""
        return self.pupil_radius_phys / pupil_to_waist

    def object_geometry(self, pupil_to_waist: float = 2.97) -> BeamGeometry:
        """Ideal image-side LG geometry referred to object coordinates.

        The Fourier transform of a waist-w_m mode has waist
        lambda F / (pi w_m) in object units.
        """
        w0 = self.wavelength * self.effective_focal / (math.pi * self.mask_waist(pupil_to_waist))
        return BeamGeometry(w0=w0, wavelength=self.wavelength)


# ---------------------------------------------------------------------------
# Zernike aberrations (Noll indexing, RMS normalization)

def noll_to_nm(j: int) -> tuple[int, int]:
    """Map Noll index j >= 1 to (radial degree n, signed azimuthal frequency m)."""
    if j < 1:
        raise ValueError(f"Noll index starts at 1, got {j}")
    n, j1 = 0, j - 1
    while j1 > n:
        n += 1
        j1 -= n
    m = (-1) ** j * ((n % 2) + 2 * ((j1 + ((n + 1) % 2)) // 2))
    return n, m


def _zernike_radial(n: int, m: int, rho):
    rho = np.asarray(rho, dtype=float)
    out = np.zeros_like(rho)
    for k in range((n - m) // 2 + 1):
        c = ((-1) ** k * math.factorial(n - k)
             / (math.factorial(k)
                * math.factorial((n + m) // 2 - k)
                * math.factorial((n - m) // 2 - k)))
        out += c * rho ** (n - 2 * k)
    return out


def zernike_value(j: int, rho, phi):
    """Noll-normalized Zernike polynomial Z_j on the unit disk.

    Normalized so the mean square over the disk is 1; a coefficient in
    waves is then an RMS wavefront error in waves.
    """
    n, m = noll_to_nm(j)
    R = _zernike_radial(n, abs(m), rho)
    if m == 0:
        return math.sqrt(n + 1.0) * R
    azi = np.cos(abs(m) * np.asarray(phi)) if m > 0 else np.sin(abs(m) * np.asarray(phi))
    return math.sqrt(2.0 * (n + 1.0)) * R * azi


@dataclass(frozen=True)
class ZernikeTerm:
    """One aberration term: Noll index and coefficient in waves RMS."""

    noll: int
    waves_rms: float

    def __post_init__(self):
        noll_to_nm(self.noll)  # validates


def zernike_phase(grid: GridSpec, pupil_radius_px: float, terms) -> np.ndarray:
    """Aberration phase 2 pi sum_j W_j Z_j(rho, phi) in radians, 0 outside the pupil."""
    R, PHI = grid.rphi()
    rho = R / (pupil_radius_px * grid.pitch)
    inside = rho <= 1.0
    phase = np.zeros(rho.shape)
    for term in terms:
        phase[inside] += 2.0 * np.pi * term.waves_rms * zernike_value(
            term.noll, rho[inside], PHI[inside])
    return phase


# ---------------------------------------------------------------------------
# Pupil construction

def _wrap_two_pi(phase: np.ndarray) -> np.ndarray:
    """Wrap to [0, 2 pi); np.mod alone rounds tiny negatives up to 2 pi."""
    out = np.mod(phase, 2.0 * np.pi)
    return np.where(out < 2.0 * np.pi, out, 0.0)


def dh_phase_mask(grid: GridSpec, w0: float,
                  superposition: LGSuperposition | None = None) -> np.ndarray:
    """Phase-only mask arg(sum a_j u_j) at the beam waist, wrapped to [0, 2 pi).

    w0 is the mode waist on the mask in meters.  The default superposition is
    the canonical double-helix pair.
    """
    if superposition is None:
        superposition = LGSuperposition.double_helix()
    geom = BeamGeometry(w0=w0, wavelength=1.0)  # z = 0: wavelength irrelevant
    R, PHI = grid.rphi()
    f = superposition_field(superposition, geom, R, PHI, 0.0)
    return _wrap_two_pi(np.angle(f))


def holographic_lens_phase(grid: GridSpec, f_hol: float, wavelength: float) -> np.ndarray:
    """Thin-lens hologram phase -k (u^2 + v^2) / (2 f_hol), wrapped to [0, 2 pi)."""
    if f_hol == 0:
        raise ValueError("f_hol must be nonzero")
    X, Y = grid.xy()
    k = 2.0 * np.pi / wavelength
    return _wrap_two_pi(-k * (X ** 2 + Y ** 2) / (2.0 * f_hol))


def apodization(rho, na):
    """Radiometric pupil apodization A(rho) = (1 - (rho NA)^2)^(-1/4), A(0) = 1."""
    rho = np.asarray(rho, dtype=float)
    arg = np.clip(1.0 - (rho * na) ** 2, 1e-12, None)
    return arg ** -0.25


def pupil_field(train: OpticalTrain, grid: GridSpec,
                mask: np.ndarray | None = None,
                zernikes=None,
                f_hol: float | None = None,
                apodize: bool = True) -> ComplexField:
    """Assemble the pupil-plane field: aperture x apodization x exp(i phases)."""
    R, _ = grid.rphi()
    rho = R / train.pupil_radius_phys
    inside = rho <= 1.0
    amp = np.where(inside, apodization(rho, train.na) if apodize else 1.0, 0.0)
    phase = np.zeros(grid.n * grid.n).reshape(grid.n, grid.n)
    if mask is not None:
        if mask.shape != (grid.n, grid.n):
            raise ValueError("mask shape does not match grid")
        phase = phase + mask
    if zernikes:
        phase = phase + zernike_phase(grid, train.pupil_radius_px, zernikes)
    if f_hol is not None:
        phase = phase + holographic_lens_phase(grid, f_hol, train.wavelength)
    return ComplexField(grid=grid, values=amp * np.exp(1j * phase), plane="pupil")


def ideal_pupil_field(train: OpticalTrain, grid: GridSpec,
                      superposition: LGSuperposition | None = None,
                      zernikes=None,
                      f_hol: float | None = None) -> ComplexField:
    """Pupil field of a perfect amplitude-and-phase modulator.

    Both quadratures of the target superposition are written onto the pupil
    (truncated at the aperture), the way a complex modulator would render it.
    The double-helix pair (n = 0 and n = 4) is invariant under the Fourier
    transform up to scale, so this pupil produces the superposition itself in
    the image plane, limited only by the aperture truncation.
    """
    if superposition is None:
        superposition = LGSuperposition.double_helix()
    R, PHI = grid.rphi()
    rho = R / train.pupil_radius_phys
    geom = BeamGeometry(w0=train.mask_waist(), wavelength=train.wavelength)
    u = superposition_field(superposition, geom, R, PHI, 0.0)
    vals = np.where(rho <= 1.0, u, 0.0)
    if zernikes:
        vals = vals * np.exp(1j * zernike_phase(grid, train.pupil_radius_px, zernikes))
    if f_hol is not None:
        vals = vals * np.exp(1j * holographic_lens_phase(grid, f_hol, train.wavelength))
    return ComplexField(grid=grid, values=vals, plane="pupil")


# ---------------------------------------------------------------------------
# Transforms

def _zoom_centered_dft(f: np.ndarray, pad_factor: int, m: int) -> np.ndarray:
    """Central m x m block of the centered 2D DFT of f zero-padded pad_factor x.

    Computed with chirp-z transforms; bit-for-bit equivalent (to rounding) to
    embedding f in a (pad*n)^2 zero array and running fftshift(fft2(ifftshift(.))),
    without materializing the padded array.
    """
    n = f.shape[0]
    N = pad_factor * n
    if m > N:
        raise ValueError(f"crop {m} exceeds padded size {N}")
    w = np.exp(-2j * np.pi / N)
    a = np.exp(-2j * np.pi * (m // 2) / N)
    k = np.arange(m)
    phase = np.exp(2j * np.pi * (n // 2) * (k - m // 2) / N)
    out = czt(f, m, w, a, axis=1) * phase[None, :]
    out = czt(out, m, w, a, axis=0) * phase[:, None]
    return out


def propagate_to_image(pupil: ComplexField, train: OpticalTrain,
                       pad_factor: int = 10,
                       out_size: int | None = None) -> ComplexField:
    """Pupil -> in-focus image plane by zero-padded centered DFT.

    Returns the central out_size x out_size crop (default: the input size n).
    The returned field is object-referred with pixel
    lambda (a_phys/NA) / (pad_factor n pitch); scaling is chosen so the full
    (uncropped, out_size = pad_factor * n) output conserves power exactly.
    """
    if pupil.plane != "pupil":
        raise ValueError("propagate_to_image expects a pupil-plane field")
    if pad_factor < 1:
        raise ValueError("pad_factor must be >= 1")
    n = pupil.grid.n
    m = n if out_size is None else int(out_size)
    d_padded = pad_factor * n * pupil.grid.pitch
    pitch_obj = train.wavelength * train.effective_focal / d_padded
    # camera-plane amplitude scale: Delta u^2 / (lambda f_tube), then referred
    # to object coordinates (multiply by M so that |E|^2 dA is conserved)
    scale = pupil.grid.pitch ** 2 / (train.wavelength * train.effective_focal)
    vals = _zoom_centered_dft(pupil.values, pad_factor, m) * scale
    return ComplexField(grid=GridSpec(n=m, pitch=pitch_obj), values=vals, plane="image")


def _spectral_band_limit(field: ComplexField, power_fraction: float = 1.0 - 1e-8) -> float:
    """Radial spatial frequency enclosing `power_fraction` of the field power."""
    F = np.fft.fft2(field.values)
    P = np.abs(F) ** 2
    fx = np.fft.fftfreq(field.grid.n, field.grid.pitch)
    NU = np.hypot(*np.meshgrid(fx, fx))
    order = np.argsort(NU.ravel())
    cum = np.cumsum(P.ravel()[order])
    total = cum[-1]
    if total == 0:
        return 0.0
    idx = np.searchsorted(cum, power_fraction * total)
    idx = min(idx, cum.size - 1)
    return float(NU.ravel()[order][idx])


def fresnel_propagate(field: ComplexField, dz: float, wavelength: float,
                      band_limit: float | None = None) -> ComplexField:
    """Paraxial angular-spectrum propagation by dz (meters).

    Applies H(nu) = exp(-i pi lambda dz |nu|^2), the transfer function
    consistent with the LG field convention in `lgmodes` (a fundamental mode
    stays a fundamental with w(z) = w0 sqrt(1 + (z/zR)^2)).

    band_limit is the maximum significant spatial frequency of the field
    (cycles/m).  If omitted it is estimated from the field spectrum.  When the
    kernel's phase step per frequency sample at the band edge exceeds pi the
    propagation would alias and AliasingError is raised.
    """
    if dz == 0:
        return ComplexField(grid=field.grid, values=field.values.copy(),
                            plane=field.plane, z_offset=field.z_offset)
    if band_limit is None:
        band_limit = _spectral_band_limit(field)
    dnu = 1.0 / field.grid.extent
    if band_limit > 0:
        max_dz = 1.0 / (2.0 * wavelength * band_limit * dnu)
        if abs(dz) > max_dz:
            raise AliasingError(
                f"|dz| = {abs(dz):.3e} m aliases the quadratic kernel at the band edge "
                f"{band_limit:.3e} /m (limit {max_dz:.3e} m); enlarge the window or "
                f"reduce the step")
    fx = np.fft.fftfreq(field.grid.n, field.grid.pitch)
    NUX, NUY = np.meshgrid(fx, fx)
    H = np.exp(-1j * np.pi * wavelength * dz * (NUX ** 2 + NUY ** 2))
    vals = np.fft.ifft2(np.fft.fft2(field.values) * H)
    return ComplexField(grid=field.grid, values=vals, plane=field.plane,
                        z_offset=field.z_offset + dz)


def flip_about_center(arr: np.ndarray, axis: int = 0) -> np.ndarray:
    """Reflect through the grid center pixel n//2 (index i -> (n - i) mod n)."""
    return np.roll(np.flip(arr, axis=axis), 1, axis=axis)


# ---------------------------------------------------------------------------
# PSF stacks

@dataclass
class PSFStack:
    """Stack of intensity PSF frames over object-space axial positions.

    frames[i] is the n x n camera intensity (object-referred pixel
    pixel_pitch) of a point emitter at z[i]; all frames share one
    normalization (the in-focus frame sums to 1, others differ only by the
    power truncated at the crop edge).
    """

    z: np.ndarray
    frames: np.ndarray
    pixel_pitch: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=float)
        self.frames = np.asarray(self.frames, dtype=float)
        if self.frames.ndim != 3 or self.frames.shape[0] != self.z.size:
            raise ValueError("frames must be (len(z), n, n)")
        if np.any(self.frames < -1e-12):
            raise ValueError("negative intensity in PSF stack")

    @property
    def n(self) -> int:
        return self.frames.shape[1]

    def frame_at(self, z: float, tol: float | None = None) -> np.ndarray:
        """Frame whose z is nearest to the query (within tol if given)."""
        i = int(np.argmin(np.abs(self.z - z)))
        if tol is not None and abs(self.z[i] - z) > tol:
            raise ValueError(f"no stack plane within {tol} of z = {z}")
        return self.frames[i]


def psf_stack(train: OpticalTrain, grid: GridSpec, z_list,
              mask: np.ndarray | None = None,
              zernikes=None,
              f_hol: float | None = None,
              pad_factor: int = 10,
              out_size: int = 512,
              apodize: bool = True,
              modulation: str = "phase") -> PSFStack:
    """Simulate camera-plane PSF frames for emitter positions z_list.

    Builds the pupil once, transforms to the in-focus image plane, then for
    each z back-propagates by -z (see module docstring for the sign) and
    records the parity-flipped intensity.

    modulation selects how the pupil is built: "phase" applies `mask` as a
    phase-only hologram on the apodized aperture; "ideal" renders the
    double-helix superposition with both quadratures (`mask` and `apodize`
    are then ignored).
    """
    if modulation == "phase":
        pup = pupil_field(train, grid, mask=mask, zernikes=zernikes,
                          f_hol=f_hol, apodize=apodize)
    elif modulation == "ideal":
        pup = ideal_pupil_field(train, grid, zernikes=zernikes, f_hol=f_hol)
    else:
        raise ValueError(f"unknown modulation {modulation!r}")
    img = propagate_to_image(pup, train, pad_factor=pad_factor, out_size=out_size)
    band = train.na / train.wavelength
    norm = float(np.sum(img.intensity()))
    z_arr = np.asarray(list(z_list), dtype=float)
    frames = np.empty((z_arr.size, img.grid.n, img.grid.n))
    for i, z in enumerate(z_arr):
        fz = fresnel_propagate(img, -z, train.wavelength, band_limit=band)
        frames[i] = flip_about_center(fz.intensity(), axis=0) / norm
    meta = {
        "wavelength_m": train.wavelength,
        "na": train.na,
        "pupil_radius_px": train.pupil_radius_px,
        "slm_pitch_m": train.slm_pitch,
        "magnification": train.magnification,
        "pad_factor": pad_factor,
        "grid_n": grid.n,
        "pixel_pitch_camera_m": img.grid.pitch * train.magnification,
    }
    return PSFStack(z=z_arr, frames=frames, pixel_pitch=img.grid.pitch, meta=meta)


# ---------------------------------------------------------------------------
# Diagnostics

def dh_fidelity(image_field: ComplexField,
                superposition: LGSuperposition | None = None,
                wavelength: float | None = None,
                waist_bounds: tuple | None = None):
    """Mode overlap |<target|achieved>|^2 maximized over the target waist.

    The achieved field is normalized on its window; the target is the ideal
    superposition at its waist plane.  Returns (fidelity, best_waist_m).
    """
    from scipy.optimize import minimize_scalar

    if superposition is None:
        superposition = LGSuperposition.double_helix()
    E = image_field.values
    E = E / math.sqrt(np.sum(np.abs(E) ** 2))
    R, PHI = image_field.grid.rphi()
    lam = wavelength if wavelength is not None else 1.0

    def overlap(w0):
        t = superposition_field(superposition, BeamGeometry(w0=w0, wavelength=lam),
                                R, PHI, 0.0)
        t = t / math.sqrt(np.sum(np.abs(t) ** 2))
        return float(np.abs(np.sum(np.conj(t) * E)) ** 2)

    if waist_bounds is None:
        waist_bounds = (2 * image_field.grid.pitch, image_field.grid.extent / 4)
    res = minimize_scalar(lambda w: -overlap(w), bounds=waist_bounds, method="bounded",
                          options={"xatol": waist_bounds[0] * 1e-3})
    return -res.fun, float(res.x)


def focal_shift(train: OpticalTrain, f_hol: float) -> float:
    """Object-space focus displacement of a hologram lens: (f_obj f2 / f1)^2 / f_hol."""
    if f_hol == 0:
        raise ValueError("f_hol must be nonzero")
    return train.effective_focal ** 2 / f_hol
