"""End-to-end recipes shared by the command-line tools and the tests.

These functions glue the optics, synthesis, localization and calibration
modules into the standard experiment shapes: render a PSF stack for a
configuration, calibrate the angle-to-z law from single-emitter frames,
synthesize ensemble sequences, and run the three-image focal-shift
protocol that produces angle-pair datasets.
"""

import numpy as np

from .aberration_study import RotationFit, fit_rotation_curve
from .calibration import AnglePairDataset, CalibrationError
from .ensemble_synth import (
    NoiseModel,
    hop_atoms,
    match_to_truth,
    sample_atoms,
    synthesize_frame,
)
from .fourier_optics import GridSpec, dh_phase_mask, psf_stack
from .lgmodes import RotationLaw, wrap_half_pi
from .localization import (
    LocalizationError,
    fit_double_gaussian,
    find_peaks,
    localize_frame,
    preprocess,
)


def simulate_stack(config, z_values, zernikes=None, f_hol=None, modulation=None,
                   out_size=None):
    """Render the configured DH-PSF stack over the given z values."""
    train = config.to_train()
    grid = config.to_grid()
    mask = dh_phase_mask(grid, train.mask_waist(config.waist_ratio))
    return psf_stack(
        train,
        grid,
        np.asarray(z_values, dtype=float),
        mask=mask,
        zernikes=zernikes,
        f_hol=f_hol,
        pad_factor=config.pad_factor,
        out_size=config.out_size if out_size is None else out_size,
        modulation=config.modulation if modulation is None else modulation,
    )


def pipeline_for(config, stack):
    """Camera pitch and pipeline knobs for frames synthesized from stack."""
    camera_pitch = config.camera_pitch(stack.pixel_pitch)
    return camera_pitch, config.to_pipeline_config(camera_pitch)


def object_pixel_pitch(config):
    """Object-referred pixel of the simulated image plane, no rendering.

    The zoomed output DFT samples the image at lambda F / (pad n p_slm)
    object-referred, independent of NA; matches PSFStack.pixel_pitch.
    """
    train = config.to_train()
    return (config.wavelength * train.effective_focal
            / (config.pad_factor * config.grid_n * config.slm_pitch))


def angle_law_from_singles(config, stack, fov_n=64, photons=10000.0):
    """Fit the angle-to-z law on noiseless single-emitter camera frames.

    One emitter per stack plane is rendered through the same binning and
    filtering as real frames and its lobe angle measured with the same
    double-Gaussian estimator the detection pipeline uses, so the law and
    the detections share any estimator systematics.  The two brightest
    maxima are fitted directly (no pair gating: with one emitter in the
    field they are the lobes by construction).  Returns the free
    (V, zR, alpha) fit; its inverse is the angle-to-z map.
    """
    camera_pitch, pipe = pipeline_for(config, stack)
    fov = GridSpec(n=fov_n, pitch=camera_pitch)
    noise = NoiseModel.noiseless(photons_per_atom=photons)
    z_used, theta = [], []
    for z in stack.z:
        atoms_one = _single_atom(z, config)
        frame = synthesize_frame(atoms_one, stack, noise, fov)
        peaks = find_peaks(preprocess(frame, pipe), pipe)
        if len(peaks) < 2:
            continue
        try:
            det = fit_double_gaussian(frame, (peaks[0], peaks[1]), pipe)
        except LocalizationError:
            continue
        z_used.append(z)
        theta.append(det.theta)
    if len(z_used) < 5:
        raise CalibrationError(
            f"only {len(z_used)} of {stack.z.size} calibration planes usable")
    fit = fit_rotation_curve(np.asarray(z_used), np.asarray(theta))
    return fit


def _single_atom(z, config):
    from .ensemble_synth import AtomSet

    return AtomSet(positions=np.array([[0.0, 0.0, z]]), lattice=config.to_lattice())


def synthesize_ensembles(config, stack, n_frames, seed):
    """Sampled lattice ensembles rendered to camera frames.

    Returns (frames, atom_sets); frame k uses sample seed seed+k and noise
    seed seed+n_frames+k, so the whole sequence is reproducible from one
    integer.
    """
    camera_pitch, _ = pipeline_for(config, stack)
    fov = GridSpec(n=config.fov_n, pitch=camera_pitch)
    lattice = config.to_lattice()
    noise = config.to_noise_model()
    frames, atom_sets = [], []
    for k in range(n_frames):
        atoms = sample_atoms(lattice, config.mean_atoms, seed=seed + k)
        frame = synthesize_frame(atoms, stack, noise, fov, seed=seed + n_frames + k)
        frames.append(frame)
        atom_sets.append(atoms)
    return np.stack(frames), atom_sets


def localize_frames(frames, pipe, law=None):
    """Run the pipeline on each frame; returns (frame_ids, detections)."""
    frames = np.asarray(frames, dtype=float)
    if frames.ndim == 2:
        frames = frames[None]
    frame_ids, detections = [], []
    for k, frame in enumerate(frames):
        for det in localize_frame(frame, pipe, law=law):
            frame_ids.append(k)
            detections.append(det)
    return frame_ids, detections


def law_from_fit(fit):
    """RotationLaw from a curve fit or a calibration result."""
    if isinstance(fit, RotationFit):
        return fit.law
    zR = getattr(fit, "zR", None)
    if zR is None:
        zR = fit.zR_eff
    return RotationLaw(V=fit.V, zR=zR, alpha=fit.alpha)


def three_image_cycles(config, stack, delta_z_values, repeats=1, seed=0,
                       hop=(0.0, 0.0), post_select_tol=None):
    """Focal-shift calibration protocol on synthetic ensembles.

    For every requested focal displacement and repeat, three frames are
    synthesized: focus at 0, focus at delta_z, focus at 0 again.  The
    focal shift is applied by rendering each atom at z - delta_z, which is
    what displacing the focal plane by +delta_z does to the recorded
    pattern.  Detections are matched across the triple by lateral
    position; atoms whose first and third angles disagree by more than the
    post-selection tolerance (hops, misdetections) are dropped.  Each
    surviving atom contributes both (theta_1, theta_2) and
    (theta_3, theta_2) records, which keeps hop-induced bias symmetric
    between the before and after references.

    hop = (p_down, p_up) applies lattice-plane hopping between consecutive
    exposures.
    """
    if post_select_tol is None:
        post_select_tol = config.post_select_tol
    camera_pitch, pipe = pipeline_for(config, stack)
    fov = GridSpec(n=config.fov_n, pitch=camera_pitch)
    lattice = config.to_lattice()
    noise = config.to_noise_model()
    match_tol = 0.45 * config.lateral_spacing

    # worst-case |z|: the shifted frame sees one hop plus the focal
    # displacement; the final frame sees two hops but no shift
    half_extent = (lattice.extent[2] - 1) / 2 * lattice.plane_spacing
    hop_step = lattice.plane_spacing if (hop[0] or hop[1]) else 0.0
    max_shift = max(abs(float(d)) for d in delta_z_values)
    z_need = max(half_extent + hop_step + max_shift, half_extent + 2 * hop_step)
    z_have = min(-stack.z.min(), stack.z.max())
    if z_need > z_have + 1e-12:
        raise CalibrationError(
            f"stack z range +-{z_have:.3g} m cannot cover the protocol's "
            f"+-{z_need:.3g} m (lattice extent + hops + focal shift)")

    theta, theta_shifted, delta_z_rec = [], [], []
    step = 0
    for delta_z in delta_z_values:
        for rep in range(repeats):
            base = seed + 1000 * step
            step += 1
            atoms1 = sample_atoms(lattice, config.mean_atoms, seed=base)
            atoms2 = hop_atoms(atoms1, hop[0], hop[1], seed=base + 1)
            atoms3 = hop_atoms(atoms2, hop[0], hop[1], seed=base + 2)
            shifted2 = _shift_focus(atoms2, delta_z)
            frames = [
                synthesize_frame(atoms1, stack, noise, fov, seed=base + 3),
                synthesize_frame(shifted2, stack, noise, fov, seed=base + 4),
                synthesize_frame(atoms3, stack, noise, fov, seed=base + 5),
            ]
            dets = [localize_frame(f, pipe) for f in frames]
            if not (dets[0] and dets[1] and dets[2]):
                continue
            c1 = np.array([d.center for d in dets[0]])
            c2 = np.array([d.center for d in dets[1]])
            c3 = np.array([d.center for d in dets[2]])
            pairs12, _ = match_to_truth(c2, c1, match_tol)
            pairs13, _ = match_to_truth(c3, c1, match_tol)
            in3 = {t: c for c, t in pairs13}
            for i2, i1 in pairs12:
                if i1 not in in3:
                    continue
                th1 = dets[0][i1].theta
                th2 = dets[1][i2].theta
                th3 = dets[2][in3[i1]].theta
                if abs(wrap_half_pi(th1 - th3)) > post_select_tol:
                    continue
                theta.extend([th1, th3])
                theta_shifted.extend([th2, th2])
                delta_z_rec.extend([delta_z, delta_z])
    if not theta:
        raise CalibrationError("no angle pairs survived matching and post-selection")
    return AnglePairDataset(
        theta=np.asarray(theta),
        theta_shifted=np.asarray(theta_shifted),
        delta_z=np.asarray(delta_z_rec),
    )


def _shift_focus(atoms, delta_z):
    """Atom set as seen with the focal plane displaced by +delta_z."""
    from .ensemble_synth import AtomSet

    positions = atoms.positions.copy()
    positions[:, 2] -= delta_z
    return AtomSet(positions=positions, indices=atoms.indices, lattice=atoms.lattice)
