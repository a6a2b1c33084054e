"""Synthetic camera frames of sparse 3D atom ensembles.

Atoms live on (or near) a cubic optical-lattice geometry; each atom stamps a
copy of the configured PSF at its axial plane, Fourier-shifted to its lateral
position, and the summed pattern picks up photon scaling, background, shot
noise with an EM excess factor, and Gaussian read noise.

Conventions
-----------
Positions are object-space meters, (x, y, z) with x = column and y = row
direction of the rendered frame, z along the optical axis.  All randomness
is drawn from `numpy.random.default_rng(seed)` so identical inputs and seed
reproduce frames bit for bit.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .fourier_optics import GridSpec, PSFStack

__all__ = [
    "LatticeSpec",
    "AtomSet",
    "NoiseModel",
    "sample_atoms",
    "synthesize_frame",
    "hop_atoms",
    "rebin",
    "match_to_truth",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LatticeSpec:
    """Cubic lattice geometry: lateral site pitch, vertical plane pitch, extent.

    extent = (nx, ny, nz) counts sites per axis; site (i, j, k) sits at
    ((i - (nx-1)/2) a, (j - (ny-1)/2) a, (k - (nz-1)/2) d_z) so the lattice
    is centered on the optical axis.
    """

    lateral_spacing: float = 612e-9
    plane_spacing: float = 532e-9
    extent: tuple = (9, 9, 5)

    def __post_init__(self):
        if self.lateral_spacing <= 0 or self.plane_spacing <= 0:
            raise ValueError("lattice spacings must be positive")
        ext = tuple(int(e) for e in self.extent)
        if len(ext) != 3 or any(e <= 0 for e in ext):
            raise ValueError(f"extent must be a positive integer triple, got {self.extent}")
        object.__setattr__(self, "extent", ext)

    @property
    def site_count(self) -> int:
        nx, ny, nz = self.extent
        return nx * ny * nz

    def site_position(self, indices):
        """Object-space (x, y, z) of integer site indices, shape (..., 3)."""
        idx = np.asarray(indices, dtype=float)
        offs = (np.asarray(self.extent, dtype=float) - 1.0) / 2.0
        scale = np.array([self.lateral_spacing, self.lateral_spacing, self.plane_spacing])
        return (idx - offs) * scale


@dataclass(frozen=True)
class AtomSet:
    """Ground-truth atom positions, optionally with lattice site indices."""

    positions: np.ndarray  # (N, 3) object-space meters
    indices: np.ndarray | None = None  # (N, 3) ints, when lattice-snapped
    lattice: LatticeSpec | None = None

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if pos.size == 0:
            pos = pos.reshape(0, 3)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ValueError("positions must be an (N, 3) array")
        object.__setattr__(self, "positions", pos)
        if self.indices is not None:
            idx = np.atleast_2d(np.asarray(self.indices, dtype=int))
            if idx.size == 0:
                idx = idx.reshape(0, 3)
            if idx.shape != pos.shape:
                raise ValueError("indices must match positions in shape")
            object.__setattr__(self, "indices", idx)

    def __len__(self):
        return self.positions.shape[0]


@dataclass(frozen=True)
class NoiseModel:
    """Camera noise parameters.

    Shot noise is Poisson scaled by an EM excess factor F^2 in [1, 2]: counts
    are drawn as F^2 * Poisson(mean / F^2), which preserves the mean and
    inflates the variance to F^2 * mean.  Read noise is additive Gaussian.
    Setting shot_noise=False returns the noiseless expectation instead
    (read noise is then skipped too), which the synthetic-data tests use.
    """

    photons_per_atom: float = 2000.0
    background_mean: float = 20.0
    gaussian_read_noise_sigma: float = 3.0
    em_gain_excess_factor: float = 2.0
    rng_seed: int = 0
    shot_noise: bool = True

    def __post_init__(self):
        if self.photons_per_atom <= 0:
            raise ValueError("photons_per_atom must be positive")
        if not 1.0 <= self.em_gain_excess_factor <= 2.0:
            raise ValueError(
                f"em_gain_excess_factor must lie in [1, 2], got {self.em_gain_excess_factor}")
        if self.gaussian_read_noise_sigma < 0:
            raise ValueError("read noise sigma must be >= 0")

    @classmethod
    def noiseless(cls, photons_per_atom: float = 2000.0,
                  background_mean: float = 0.0) -> "NoiseModel":
        return cls(photons_per_atom=photons_per_atom, background_mean=background_mean,
                   gaussian_read_noise_sigma=0.0, em_gain_excess_factor=1.0,
                   shot_noise=False)


def sample_atoms(lattice: LatticeSpec, mean_count: float, seed: int,
                 continuous_z: bool = False) -> AtomSet:
    """Draw a Poisson-distributed number of atoms on distinct lattice sites.

    Sites are chosen uniformly without replacement, so mean_count must not
    exceed the site count; a Poisson draw that does is clamped to it (all
    sites filled).  With continuous_z=True the snapped z is replaced by a
    uniform draw over the lattice's axial span, for calibration sampling
    where plane quantization is unwanted; indices then keep the lateral
    site but k refers to the nearest plane.
    """
    if mean_count <= 0:
        raise ValueError("mean_count must be positive")
    if mean_count > lattice.site_count:
        raise ValueError(
            f"mean_count {mean_count} exceeds the {lattice.site_count} available sites")
    rng = np.random.default_rng(seed)
    n = int(rng.poisson(mean_count))
    if n > lattice.site_count:
        log.debug("Poisson draw %d clamped to %d sites", n, lattice.site_count)
        n = lattice.site_count
    flat = rng.choice(lattice.site_count, size=n, replace=False)
    indices = np.stack(np.unravel_index(flat, lattice.extent), axis=-1)
    positions = lattice.site_position(indices)
    if continuous_z and n > 0:
        nz = lattice.extent[2]
        half_span = nz * lattice.plane_spacing / 2.0
        z = rng.uniform(-half_span, half_span, size=n)
        positions = positions.copy()
        positions[:, 2] = z
        indices = indices.copy()
        indices[:, 2] = np.clip(np.round(z / lattice.plane_spacing + (nz - 1) / 2.0),
                                0, nz - 1).astype(int)
    return AtomSet(positions=positions, indices=indices if n else None, lattice=lattice)


def rebin(arr: np.ndarray, factor: int) -> np.ndarray:
    """Sum factor x factor blocks of a 2D array (integrating downsample)."""
    if factor == 1:
        return arr
    n0, n1 = arr.shape
    if n0 % factor or n1 % factor:
        raise ValueError(f"array shape {arr.shape} not divisible by factor {factor}")
    return arr.reshape(n0 // factor, factor, n1 // factor, factor).sum(axis=(1, 3))


def _fractional_shift(tile: np.ndarray, dy: float, dx: float) -> np.ndarray:
    """Shift by sub-pixel amounts via the Fourier shift theorem.

    Exact for the band-limited PSF frames; periodic wrap moves at most half
    a pixel of edge content, negligible for the compact patterns used here.
    """
    if dy == 0.0 and dx == 0.0:
        return tile
    ft = ndimage.fourier_shift(np.fft.fft2(tile), (dy, dx))
    return np.fft.ifft2(ft).real


def synthesize_frame(atoms: AtomSet, stack: PSFStack, noise: NoiseModel,
                     fov: GridSpec, seed: int | None = None) -> np.ndarray:
    """Render one camera frame of the atom set through the PSF stack.

    Each atom uses the stack frame nearest its z (which must lie inside the
    stack's axial range), Fourier-shifted laterally to its position; pattern
    sums are accumulated on the stack's pixel grid and block-summed down to
    the field of view's pixel pitch, which must be an integer multiple of
    the stack pitch.  Photon scaling, background, shot noise with EM excess,
    and Gaussian read noise are then applied per the noise model; the frame
    is clipped at zero (interpolation ringing and read noise can dip below).
    """
    factor = int(round(fov.pitch / stack.pixel_pitch))
    if factor < 1 or abs(fov.pitch - factor * stack.pixel_pitch) > 1e-6 * stack.pixel_pitch:
        raise ValueError(
            f"fov pitch {fov.pitch} is not an integer multiple of the stack pitch "
            f"{stack.pixel_pitch}")
    n_fine = fov.n * factor
    canvas = np.zeros((n_fine, n_fine))
    zmin, zmax = float(stack.z.min()), float(stack.z.max())
    half_step = 0.5 * float(np.max(np.diff(np.sort(stack.z)))) if stack.z.size > 1 else 0.0
    # align the origin with the center of output pixel fov.n//2: that pixel
    # covers fine columns [c*factor, (c+1)*factor), whose midpoint is offset
    # by (factor-1)/2 fine pixels
    center = (fov.n // 2) * factor + (factor - 1) / 2.0
    tile_n = stack.n
    tc = tile_n // 2
    for x, y, z in atoms.positions:
        if not (zmin - half_step <= z <= zmax + half_step):
            raise ValueError(
                f"atom z = {z:.3e} m outside the stack range "
                f"[{zmin:.3e}, {zmax:.3e}] m")
        tile = stack.frame_at(z)
        col = center + x / stack.pixel_pitch
        row = center + y / stack.pixel_pitch
        ir, ic = int(np.floor(row)), int(np.floor(col))
        tile = _fractional_shift(tile, row - ir, col - ic)
        # paste with cropping at the canvas edges
        r0, c0 = ir - tc, ic - tc
        rs0, cs0 = max(0, -r0), max(0, -c0)
        rd0, cd0 = max(0, r0), max(0, c0)
        h = min(tile_n - rs0, n_fine - rd0)
        w = min(tile_n - cs0, n_fine - cd0)
        if h <= 0 or w <= 0:
            continue
        canvas[rd0:rd0 + h, cd0:cd0 + w] += tile[rs0:rs0 + h, cs0:cs0 + w]
    signal = np.maximum(rebin(canvas, factor), 0.0) * noise.photons_per_atom
    expectation = signal + noise.background_mean
    if not noise.shot_noise:
        return np.maximum(expectation, 0.0)
    rng = np.random.default_rng(noise.rng_seed if seed is None else seed)
    excess = noise.em_gain_excess_factor
    frame = excess * rng.poisson(np.maximum(expectation, 0.0) / excess).astype(float)
    if noise.gaussian_read_noise_sigma > 0:
        frame = frame + rng.normal(0.0, noise.gaussian_read_noise_sigma, size=frame.shape)
    return np.maximum(frame, 0.0)


def hop_atoms(atoms: AtomSet, p_hop_down: float, p_hop_up: float, seed: int) -> AtomSet:
    """Shift each atom by -d_z, +d_z or 0 with the given probabilities.

    Models inter-exposure vertical hopping; gravity makes down-hops the more
    likely channel in practice, hence the separate probabilities.
    """
    if not (0.0 <= p_hop_down <= 1.0 and 0.0 <= p_hop_up <= 1.0):
        raise ValueError("hop probabilities must lie in [0, 1]")
    if p_hop_down + p_hop_up > 1.0:
        raise ValueError("p_hop_down + p_hop_up must not exceed 1")
    if atoms.lattice is None:
        raise ValueError("hop_atoms needs an AtomSet built on a lattice (plane spacing)")
    rng = np.random.default_rng(seed)
    u = rng.random(len(atoms))
    step = np.where(u < p_hop_down, -1, np.where(u < p_hop_down + p_hop_up, 1, 0))
    positions = atoms.positions.copy()
    positions[:, 2] += step * atoms.lattice.plane_spacing
    indices = atoms.indices
    if indices is not None:
        indices = indices.copy()
        indices[:, 2] += step
    return replace(atoms, positions=positions, indices=indices)


def match_to_truth(centers, truth_xy, max_distance: float):
    """Greedy nearest-neighbor matching of detected to planted positions.

    centers and truth_xy are (N, 2) and (M, 2) arrays of lateral positions;
    pairs are accepted closest-first, each side used at most once, up to
    max_distance.  Returns (pairs, distances) with pairs a list of
    (center_index, truth_index).
    """
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    truth_xy = np.atleast_2d(np.asarray(truth_xy, dtype=float))
    if centers.size == 0 or truth_xy.size == 0:
        return [], np.array([])
    d = np.linalg.norm(centers[:, None, :] - truth_xy[None, :, :], axis=-1)
    pairs, dists = [], []
    used_c, used_t = set(), set()
    order = np.dstack(np.unravel_index(np.argsort(d, axis=None), d.shape))[0]
    for ci, ti in order:
        if d[ci, ti] > max_distance:
            break
        if ci in used_c or ti in used_t:
            continue
        used_c.add(int(ci))
        used_t.add(int(ti))
        pairs.append((int(ci), int(ti)))
        dists.append(d[ci, ti])
    return pairs, np.asarray(dists)
