import numpy as np
import pytest

from dhpsf.ensemble_synth import (
    AtomSet,
    LatticeSpec,
    NoiseModel,
    hop_atoms,
    match_to_truth,
    rebin,
    sample_atoms,
    synthesize_frame,
)
from dhpsf.fourier_optics import GridSpec

from conftest import PLANE_SPACING


def lattice(extent=(9, 9, 5)):
    return LatticeSpec(lateral_spacing=612e-9, plane_spacing=PLANE_SPACING,
                       extent=extent)


# ---------------------------------------------------------------------------
# lattice geometry

def test_lattice_site_positions_are_centered():
    lat = lattice((3, 5, 3))
    assert lat.site_count == 45
    # index grid is symmetric about the origin
    p0 = lat.site_position(np.array([[0, 0, 0]]))[0]
    p2 = lat.site_position(np.array([[2, 4, 2]]))[0]
    assert np.allclose(p0, -p2)
    mid = lat.site_position(np.array([[1, 2, 1]]))[0]
    assert np.allclose(mid, 0.0)
    step = (lat.site_position(np.array([[2, 2, 1]]))[0]
            - lat.site_position(np.array([[1, 2, 1]]))[0])
    assert step[0] == pytest.approx(612e-9)
    assert step[1] == step[2] == 0.0


def test_lattice_validation():
    with pytest.raises(ValueError):
        LatticeSpec(lateral_spacing=-1.0, plane_spacing=PLANE_SPACING,
                    extent=(3, 3, 3))
    with pytest.raises(ValueError):
        LatticeSpec(lateral_spacing=612e-9, plane_spacing=PLANE_SPACING,
                    extent=(3, 3))


def test_atom_set_empty_positions_shape():
    a = AtomSet(positions=np.zeros((0, 3)))
    assert len(a) == 0
    with pytest.raises(ValueError):
        AtomSet(positions=np.zeros((3, 2)))


# ---------------------------------------------------------------------------
# sampling

def test_sample_atoms_deterministic_and_distinct():
    lat = lattice()
    a = sample_atoms(lat, 6.0, seed=42)
    b = sample_atoms(lat, 6.0, seed=42)
    assert np.array_equal(a.positions, b.positions)
    c = sample_atoms(lat, 6.0, seed=43)
    assert not np.array_equal(a.positions, c.positions)
    # occupied sites are distinct
    flat = np.ravel_multi_index(a.indices.T, lat.extent)
    assert len(set(flat.tolist())) == len(a)


def test_sample_atoms_poisson_mean():
    lat = lattice((21, 21, 5))
    counts = [len(sample_atoms(lat, 6.0, seed=s)) for s in range(2000)]
    mean = np.mean(counts)
    # 4 sigma band for a Poisson(6) mean over 2000 draws
    assert abs(mean - 6.0) < 4 * np.sqrt(6.0 / 2000)


def test_sample_atoms_rejects_overfilled_lattice():
    lat = lattice((2, 2, 1))
    with pytest.raises(ValueError, match="exceeds"):
        sample_atoms(lat, 10.0, seed=0)
    with pytest.raises(ValueError):
        sample_atoms(lat, 0.0, seed=0)


def test_sample_atoms_continuous_z():
    lat = lattice((9, 9, 5))
    a = sample_atoms(lat, 12.0, seed=7, continuous_z=True)
    z = a.positions[:, 2]
    half = 5 * PLANE_SPACING / 2
    assert np.all(np.abs(z) <= half)
    # z is no longer plane-quantized
    assert np.any(np.abs(z / PLANE_SPACING - np.round(z / PLANE_SPACING)) > 0.05)
    # the k index points at the nearest plane
    k = a.indices[:, 2]
    z_plane = (k - 2) * PLANE_SPACING
    assert np.all(np.abs(z - z_plane) <= PLANE_SPACING * 0.5 + 1e-12)


# ---------------------------------------------------------------------------
# frame synthesis

def test_rebin_sums_blocks():
    a = np.arange(16.0).reshape(4, 4)
    r = rebin(a, 2)
    assert r.shape == (2, 2)
    assert r[0, 0] == a[:2, :2].sum()
    assert rebin(a, 1) is a
    with pytest.raises(ValueError):
        rebin(np.zeros((5, 4)), 2)


def single_atom(x=0.0, y=0.0, z=0.0):
    return AtomSet(positions=np.array([[x, y, z]]))


def camera_fov(stack, n=64, factor=10):
    return GridSpec(n=n, pitch=factor * stack.pixel_pitch)


def test_synthesize_frame_noiseless_flux(stack_na06):
    fov = camera_fov(stack_na06)
    noise = NoiseModel.noiseless(photons_per_atom=5000.0, background_mean=7.0)
    frame = synthesize_frame(single_atom(), stack_na06, noise, fov)
    assert frame.shape == (64, 64)
    signal = frame.sum() - 7.0 * 64 * 64
    # each stack frame integrates to ~1 over the full window; the fov crop
    # loses only tail flux
    assert signal == pytest.approx(5000.0, rel=0.01)
    # doubling the photon budget exactly doubles the signal
    noise2 = NoiseModel.noiseless(photons_per_atom=10000.0, background_mean=7.0)
    frame2 = synthesize_frame(single_atom(), stack_na06, noise2, fov)
    assert np.allclose(frame2 - 7.0, 2.0 * (frame - 7.0), rtol=1e-9, atol=1e-9)


def test_synthesize_frame_lateral_placement(stack_na06):
    fov = camera_fov(stack_na06)
    noise = NoiseModel.noiseless(photons_per_atom=1000.0, background_mean=0.0)
    ref = synthesize_frame(single_atom(), stack_na06, noise, fov)
    dx = 5 * fov.pitch
    moved = synthesize_frame(single_atom(x=dx), stack_na06, noise, fov)
    # a whole-camera-pixel displacement shifts the image by whole pixels
    assert np.allclose(moved[:, 5:], ref[:, :-5], rtol=1e-6, atol=1e-9 * ref.max())
    # a sub-pixel displacement moves the centroid by the same amount
    sub = synthesize_frame(single_atom(x=0.3 * fov.pitch), stack_na06, noise, fov)
    cols = np.arange(64)
    c_ref = (ref.sum(axis=0) * cols).sum() / ref.sum()
    c_sub = (sub.sum(axis=0) * cols).sum() / sub.sum()
    assert c_sub - c_ref == pytest.approx(0.3, abs=0.02)


def test_synthesize_frame_rejects_out_of_range_z(stack_na06):
    fov = camera_fov(stack_na06)
    noise = NoiseModel.noiseless()
    with pytest.raises(ValueError, match="outside the stack range"):
        synthesize_frame(single_atom(z=9 * PLANE_SPACING), stack_na06, noise, fov)


def test_synthesize_frame_rejects_non_integer_binning(stack_na06):
    fov = GridSpec(n=32, pitch=2.5 * stack_na06.pixel_pitch)
    with pytest.raises(ValueError, match="integer multiple"):
        synthesize_frame(single_atom(), stack_na06, NoiseModel.noiseless(), fov)


def test_synthesize_frame_noise_statistics(stack_na06):
    # background-only region: Poisson with EM excess doubles the variance,
    # and the read noise adds its square
    fov = camera_fov(stack_na06, n=48)
    noise = NoiseModel(photons_per_atom=1000.0, background_mean=40.0,
                       gaussian_read_noise_sigma=3.0, em_gain_excess_factor=2.0)
    empty = AtomSet(positions=np.zeros((0, 3)))
    frames = np.stack([
        synthesize_frame(empty, stack_na06, noise, fov, seed=s)
        for s in range(40)])
    mean = frames.mean()
    var = frames.var()
    assert mean == pytest.approx(40.0, rel=0.02)
    assert var == pytest.approx(2.0 * 40.0 + 9.0, rel=0.05)


def test_synthesize_frame_seeded_determinism(stack_na06):
    fov = camera_fov(stack_na06)
    noise = NoiseModel(photons_per_atom=2000.0, background_mean=20.0,
                       gaussian_read_noise_sigma=3.0, em_gain_excess_factor=2.0)
    a = synthesize_frame(single_atom(), stack_na06, noise, fov, seed=11)
    b = synthesize_frame(single_atom(), stack_na06, noise, fov, seed=11)
    c = synthesize_frame(single_atom(), stack_na06, noise, fov, seed=12)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


# ---------------------------------------------------------------------------
# hopping and matching

def test_hop_atoms_moves_whole_planes():
    lat = lattice()
    atoms = sample_atoms(lat, 8.0, seed=3)
    down = hop_atoms(atoms, 1.0, 0.0, seed=0)
    assert np.allclose(down.positions[:, 2] - atoms.positions[:, 2],
                       -PLANE_SPACING)
    assert np.array_equal(down.indices[:, 2], atoms.indices[:, 2] - 1)
    up = hop_atoms(atoms, 0.0, 1.0, seed=0)
    assert np.allclose(up.positions[:, 2] - atoms.positions[:, 2],
                       PLANE_SPACING)
    stay = hop_atoms(atoms, 0.0, 0.0, seed=0)
    assert np.array_equal(stay.positions, atoms.positions)
    # lateral coordinates never change
    assert np.array_equal(down.positions[:, :2], atoms.positions[:, :2])


def test_hop_atoms_statistics_and_validation():
    lat = lattice((31, 31, 9))
    atoms = sample_atoms(lat, 400.0, seed=1)
    hopped = hop_atoms(atoms, 0.2, 0.05, seed=9)
    step = (hopped.positions[:, 2] - atoms.positions[:, 2]) / PLANE_SPACING
    n = len(atoms)
    frac_down = np.sum(step < -0.5) / n
    frac_up = np.sum(step > 0.5) / n
    assert abs(frac_down - 0.2) < 4 * np.sqrt(0.2 * 0.8 / n)
    assert abs(frac_up - 0.05) < 4 * np.sqrt(0.05 * 0.95 / n)
    with pytest.raises(ValueError):
        hop_atoms(atoms, 0.7, 0.6, seed=0)
    with pytest.raises(ValueError):
        hop_atoms(atoms, -0.1, 0.0, seed=0)
    with pytest.raises(ValueError, match="lattice"):
        hop_atoms(AtomSet(positions=np.zeros((2, 3))), 0.1, 0.1, seed=0)


def test_match_to_truth_greedy_one_to_one():
    truth = np.array([[0.0, 0.0], [1.0, 0.0], [5.0, 5.0]])
    centers = np.array([[0.1, 0.0], [0.4, 0.0], [9.0, 9.0]])
    pairs, dists = match_to_truth(centers, truth, max_distance=1.0)
    got = dict(pairs)
    # nearest pair wins first; the second center takes the remaining site;
    # the far center matches nothing
    assert got[0] == 0
    assert got[1] == 1
    assert 2 not in got
    assert len(pairs) == 2
    assert dists[0] == pytest.approx(0.1)
    assert match_to_truth(np.zeros((0, 2)), truth, 1.0) == ([], pytest.approx(np.array([])))


def test_match_to_truth_respects_max_distance():
    truth = np.array([[0.0, 0.0]])
    centers = np.array([[0.0, 2.0]])
    pairs, _ = match_to_truth(centers, truth, max_distance=1.0)
    assert pairs == []
