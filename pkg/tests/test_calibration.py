import math

import numpy as np
import pytest

from dhpsf.calibration import (
    AnglePairDataset,
    CalibrationResult,
    ModelDomainError,
    UnidentifiableError,
    fit_calibration,
    lattice_spectrum,
    make_angle_pairs,
    post_select,
    shifted_angle_model,
)
from dhpsf.lgmodes import wrap_half_pi

from conftest import PLANE_SPACING as DZ

ZR = 14.39 * DZ
ALPHA = math.radians(34.0)


def law(z):
    return 2.0 * np.arctan(np.asarray(z) / ZR) + ALPHA


# ---------------------------------------------------------------------------
# shifted-angle model

def test_model_identity_at_zero_shift():
    thetas = np.linspace(-1.2, 1.2, 7)
    for alpha in (-0.4, 0.0, 0.7):
        out = shifted_angle_model(thetas * 0.5 + alpha, 0.0, 2.3e-6, alpha)
        assert np.allclose(out, thetas * 0.5 + alpha, atol=1e-14)


def test_model_frozen_value():
    # independent scalar arithmetic:
    # u = (0.5 - 0.3)/2, theta_s = 2*atan(tan(u) - 1.2/3.0) + 0.3
    assert float(shifted_angle_model(0.5, 1.2, 3.0, 0.3)) == pytest.approx(
        -0.28229945518519056, abs=1e-14)
    # on-axis start: theta = alpha gives alpha + V*atan(-dz/zR)
    got = math.degrees(float(shifted_angle_model(
        math.radians(34.0), 2 * DZ, ZR, math.radians(34.0))))
    assert got == pytest.approx(34.0 - 2 * math.degrees(math.atan(2.0 / 14.39)),
                                abs=1e-9)
    assert got == pytest.approx(18.175, abs=1e-2)


def test_model_composition_of_shifts():
    thetas = ALPHA + np.linspace(-1.1, 1.1, 9)
    d1, d2 = 1.7 * DZ, -3.2 * DZ
    once = shifted_angle_model(thetas, d1 + d2, ZR, ALPHA)
    twice = shifted_angle_model(shifted_angle_model(thetas, d1, ZR, ALPHA),
                                d2, ZR, ALPHA)
    assert np.allclose(once, twice, atol=1e-12)
    # a shift and its inverse cancel
    back = shifted_angle_model(shifted_angle_model(thetas, d1, ZR, ALPHA),
                               -d1, ZR, ALPHA)
    assert np.allclose(back, thetas, atol=1e-12)


def test_model_domain_and_validation():
    with pytest.raises(ModelDomainError):
        shifted_angle_model(ALPHA + math.pi, 0.0, ZR, ALPHA)
    with pytest.raises(ValueError, match="zR"):
        shifted_angle_model(0.1, 0.0, -1.0, 0.0)


# ---------------------------------------------------------------------------
# dataset containers

def test_dataset_groups_and_records():
    ds = AnglePairDataset.from_records([(0.1, 0.2, 0.0), (0.3, 0.1, 1e-6),
                                        (0.0, -0.1, 1e-6)])
    assert len(ds) == 3
    g = ds.groups()
    assert set(g) == {0.0, 1e-6}
    assert g[1e-6][0].shape == (2,)


def test_dataset_validation():
    with pytest.raises(ValueError, match="equal-length"):
        AnglePairDataset(theta=np.zeros(3), theta_shifted=np.zeros(2),
                         delta_z=np.zeros(3))
    with pytest.raises(ValueError, match="empty"):
        AnglePairDataset(theta=np.zeros(0), theta_shifted=np.zeros(0),
                         delta_z=np.zeros(0))
    with pytest.raises(ValueError, match="finite"):
        AnglePairDataset(theta=np.array([np.nan]), theta_shifted=np.zeros(1),
                         delta_z=np.zeros(1))


def test_result_validation():
    with pytest.raises(ValueError, match="zR_eff"):
        CalibrationResult(zR_eff=0.0, alpha=0.0, V=2.0, mse=1.0,
                          parameter_uncertainties=(1.0, 1.0))
    with pytest.raises(ValueError, match="mse"):
        CalibrationResult(zR_eff=1.0, alpha=0.0, V=2.0, mse=-1.0,
                          parameter_uncertainties=(1.0, 1.0))


# ---------------------------------------------------------------------------
# joint fit

def test_fit_exact_recovery():
    thetas = np.radians(np.linspace(-55.0, 55.0, 13)) + ALPHA
    ds = make_angle_pairs(ZR, ALPHA, [k * DZ for k in range(-4, 5)], thetas)
    res = fit_calibration(ds)
    assert res.zR_eff == pytest.approx(ZR, rel=1e-6)
    assert res.alpha == pytest.approx(ALPHA, abs=1e-8)
    assert res.mse < 1e-10
    assert res.V == 2.0
    assert res.meta["n_records"] == len(ds)


def test_fit_with_explicit_start():
    thetas = np.radians(np.linspace(-40.0, 40.0, 9)) + ALPHA
    ds = make_angle_pairs(ZR, ALPHA, [-2 * DZ, 2 * DZ], thetas)
    res = fit_calibration(ds, zR_init=5 * DZ, alpha_init=0.4)
    assert res.zR_eff == pytest.approx(ZR, rel=1e-6)


def test_fit_unidentifiable_when_all_shifts_vanish():
    ds = AnglePairDataset(theta=np.array([0.1, 0.2]),
                          theta_shifted=np.array([0.1, 0.2]),
                          delta_z=np.zeros(2))
    with pytest.raises(UnidentifiableError):
        fit_calibration(ds)


def test_fit_unbiased_under_response_noise():
    # symmetric Gaussian noise on the shifted angle only; noise on the
    # regressor angle is an errors-in-variables effect that attenuates zR
    # (the realistic generator, make_angle_pairs, adds noise to both)
    sig = math.radians(3.0)
    shifts = [k * DZ for k in range(-4, 5)]
    errs_z, errs_a = [], []
    for s in range(200):
        rng = np.random.default_rng(1000 + s)
        th_all, ts_all, dz_all = [], [], []
        for d in shifts:
            th = np.radians(rng.uniform(-55, 55, 25)) + ALPHA
            ts = shifted_angle_model(th, d, ZR, ALPHA) + rng.normal(0, sig, 25)
            th_all.append(th)
            ts_all.append(wrap_half_pi(ts))
            dz_all.append(np.full(25, d))
        ds = AnglePairDataset(np.concatenate(th_all), np.concatenate(ts_all),
                              np.concatenate(dz_all))
        res = fit_calibration(ds)
        errs_z.append(res.zR_eff - ZR)
        errs_a.append(wrap_half_pi(res.alpha - ALPHA))
    ez, ea = np.array(errs_z), np.array(errs_a)
    assert abs(ez.mean()) < ez.std() / math.sqrt(len(ez))
    assert abs(ea.mean()) < ea.std() / math.sqrt(len(ea))


def test_fit_coverage_short_run():
    # ten instances of the synthetic-recovery protocol: 500 pairs per shift
    # group, noise on both angles; the full 100-seed version runs in the
    # acceptance suite
    sig = math.radians(3.0)
    shifts = [k * DZ for k in (-4, -2, 0, 2, 4)]
    ok = 0
    for s in range(10):
        rng = np.random.default_rng(20000 + s)
        th_all, ts_all, dz_all = [], [], []
        for d in shifts:
            z = rng.uniform(-10 * DZ, 10 * DZ, 500)
            th = law(z)
            ts = shifted_angle_model(th, d, ZR, ALPHA)
            th = th + rng.normal(0, sig, th.shape)
            ts = ts + rng.normal(0, sig, ts.shape)
            th_all.append(wrap_half_pi(th))
            ts_all.append(wrap_half_pi(ts))
            dz_all.append(np.full(500, d))
        ds = AnglePairDataset(np.concatenate(th_all), np.concatenate(ts_all),
                              np.concatenate(dz_all))
        res = fit_calibration(ds)
        ok += (abs(res.zR_eff - ZR) < 0.3 * DZ
               and abs(wrap_half_pi(res.alpha - ALPHA)) < math.radians(1.5))
    assert ok >= 8


# ---------------------------------------------------------------------------
# post-selection and hopping bias

def test_post_select_circular():
    assert post_select(0.3, 0.3)
    assert bool(post_select(math.radians(-89), math.radians(89),
                            tol=math.radians(5)))
    assert not bool(post_select(math.radians(10), math.radians(20),
                                tol=math.radians(2)))
    out = post_select(np.array([0.0, 1.0]), np.array([0.01, 0.0]),
                      tol=math.radians(2))
    assert out.tolist() == [True, False]
    with pytest.raises(ValueError):
        post_select(0.0, 0.0, tol=0.0)


def _three_image_cycle(p_down, p_up, seed, sig=math.radians(2.0), n=200):
    """Model-level three-exposure dataset with plane hops between exposures.

    Returns the dataset (both (first, shifted) and (third, shifted) pair
    families after post-selection, plus (first, third) records at
    delta_z = 0) and the raw first-vs-third residuals in degrees.
    """
    rng = np.random.default_rng(seed)
    th_all, ts_all, dz_all = [], [], []
    resid0 = []
    for k in (-4, -2, 2, 4):
        d = k * DZ
        z1 = rng.uniform(-8 * DZ, 8 * DZ, n)
        hop = rng.uniform(size=n)
        z2 = z1 + np.where(hop < p_down, -DZ, np.where(hop > 1 - p_up, DZ, 0.0))
        hop = rng.uniform(size=n)
        z3 = z2 + np.where(hop < p_down, -DZ, np.where(hop > 1 - p_up, DZ, 0.0))
        t1 = law(z1) + rng.normal(0, sig, n)
        t2 = law(z2 - d) + rng.normal(0, sig, n)
        t3 = law(z3) + rng.normal(0, sig, n)
        keep = post_select(t1, t3, tol=math.radians(4.0))
        th_all += [t1[keep], t3[keep]]
        ts_all += [t2[keep], t2[keep]]
        dz_all += [np.full(int(keep.sum()), d)] * 2
        th_all.append(t1)
        ts_all.append(t3)
        dz_all.append(np.zeros(n))
        resid0.append(t3 - t1)
    ds = AnglePairDataset(np.concatenate(th_all), np.concatenate(ts_all),
                          np.concatenate(dz_all))
    return ds, np.degrees(np.concatenate(resid0))


def test_gravity_biased_hopping_cancels_in_fit():
    # downward hops dominate, as under gravity.  Single-hop events bias the
    # (first, shifted) family down and the (third, shifted) family up by the
    # same amount, so fitting both families with post-selection leaves the
    # parameters where they were, while the unshifted first-vs-third records
    # retain the signed hop imprint.
    shifts_z, shifts_a, sig_z, sig_a = [], [], [], []
    resid_means = []
    for seed in (77, 101, 202, 303, 404, 505):
        ds_h, resid0 = _three_image_cycle(0.15, 0.05, seed)
        ds_c, _ = _three_image_cycle(0.0, 0.0, seed)
        fit_h, fit_c = fit_calibration(ds_h), fit_calibration(ds_c)
        shifts_z.append(fit_h.zR_eff - fit_c.zR_eff)
        shifts_a.append(wrap_half_pi(fit_h.alpha - fit_c.alpha))
        sig_z.append(fit_h.parameter_uncertainties[0])
        sig_a.append(fit_h.parameter_uncertainties[1])
        resid_means.append(resid0.mean())
        # hopping inflates the spread of the shifted-pair residuals
        assert fit_h.mse > fit_c.mse
    assert abs(np.mean(shifts_z)) < np.mean(sig_z)
    assert abs(np.mean(shifts_a)) < np.mean(sig_a)
    # mean signed first-vs-third residual is negative: net hops go down and
    # the lobe angle grows with z
    assert max(resid_means) < -1.0


# ---------------------------------------------------------------------------
# vertical-distribution spectrum

def spectrum_band(z, width=DZ):
    return lattice_spectrum(z, DZ, freq_range=(0.3 / DZ, 1.7 / DZ))


def test_spectrum_plane_locked_peak():
    rng = np.random.default_rng(5)
    z = rng.integers(-10, 11, 4000) * DZ
    f, p = spectrum_band(z)
    f_peak = f[np.argmax(p)]
    bin_w = f[1] - f[0]
    assert abs(f_peak - 1.0 / DZ) <= bin_w
    # continuum null: uniform z over the same span shows no such line
    z_u = rng.uniform(-10.5 * DZ, 10.5 * DZ, 4000)
    fu, pu = spectrum_band(z_u)
    near = np.abs(fu - 1.0 / DZ) <= bin_w / 2
    assert pu[near].max() <= 3.0 * np.median(pu)
    assert p.max() > 100 * pu.max()


def test_spectrum_jitter_attenuates_peak():
    rng = np.random.default_rng(5)
    z0 = rng.integers(-10, 11, 4000) * DZ
    f0, p0 = spectrum_band(z0)
    z_j = z0 + rng.normal(0.0, 0.25 * DZ, z0.size)
    fj, pj = spectrum_band(z_j)
    bin_w = fj[1] - fj[0]
    assert abs(fj[np.argmax(pj)] - 1.0 / DZ) <= bin_w
    ratio = pj.max() / p0.max()
    # squared Debye-Waller factor exp(-(2 pi sigma / d_z)^2) at sigma = d_z/4
    assert 0.04 < ratio < 0.2


def test_spectrum_options_and_errors():
    z = np.arange(-5, 6) * DZ
    f, p = lattice_spectrum(z, DZ)
    assert f[0] == 0.0 and len(f) == len(p)
    # wider bins lower the Nyquist frequency; the resolution is set by the
    # fixed data span
    f2, _ = lattice_spectrum(z, DZ, bin_width=DZ / 4)
    assert f2.max() < 0.6 * f.max()
    fr, _ = lattice_spectrum(z, DZ, freq_range=(0.5 / DZ, 1.5 / DZ))
    assert fr.min() >= 0.5 / DZ and fr.max() <= 1.5 / DZ
    with pytest.raises(ValueError, match="at least two"):
        lattice_spectrum([0.0], DZ)
    with pytest.raises(ValueError, match="d_z"):
        lattice_spectrum(z, 0.0)


# ---------------------------------------------------------------------------
# synthetic pair generator

def test_make_angle_pairs_generator():
    thetas = np.radians([-30.0, 0.0, 25.0]) + ALPHA
    ds = make_angle_pairs(ZR, ALPHA, [0.0, 2 * DZ], thetas)
    assert len(ds) == 6
    assert np.allclose(ds.theta[:3], wrap_half_pi(thetas))
    g = ds.groups()
    assert np.allclose(g[0.0][1], g[0.0][0])  # identity group
    a = make_angle_pairs(ZR, ALPHA, [2 * DZ], thetas, noise_sigma=0.01, seed=4)
    b = make_angle_pairs(ZR, ALPHA, [2 * DZ], thetas, noise_sigma=0.01, seed=4)
    c = make_angle_pairs(ZR, ALPHA, [2 * DZ], thetas, noise_sigma=0.01, seed=5)
    assert np.array_equal(a.theta, b.theta)
    assert not np.array_equal(a.theta, c.theta)
