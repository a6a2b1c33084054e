"""Fisher information of PSF intensity profiles for emitter coordinates.

The detected transverse intensity, normalized to unit mass, is treated as the
probability density of photon arrival positions.  The Fisher information for
an emitter coordinate eta is then

    I_eta = integral f (d ln f / d eta)^2 dA,

evaluated here by central finite differences in eta on a fixed quadrature
window.  All values are reported in waist-scaled units (the SI value times
w0^2), which makes the fundamental-mode results dimensionless:

    I_x = I_y = 4 / (1 + zt^2),
    I_z = 4 (w0/zR)^2 zt^2 / (1 + zt^2)^2,      zt = z / zR.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lgmodes import BeamGeometry, LGIndex, LGSuperposition, superposition_field

__all__ = [
    "FisherCurve",
    "NormalizationError",
    "StepSensitivityError",
    "fisher_fundamental_analytic",
    "fisher_numeric",
    "fisher_curves_dh",
]


class NormalizationError(ValueError):
    """Density does not integrate to one on the sampling window."""


class StepSensitivityError(RuntimeError):
    """Finite-difference result changes by more than 1% when the step halves."""


@dataclass
class FisherCurve:
    """Fisher information (waist-scaled units) along a z grid."""

    z_grid: np.ndarray
    I_x: np.ndarray
    I_y: np.ndarray
    I_z: np.ndarray
    label: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.z_grid = np.asarray(self.z_grid, dtype=float)
        for name in ("I_x", "I_y", "I_z"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != self.z_grid.shape:
                raise ValueError(f"{name} length does not match z_grid")
            if np.any(arr < -1e-12):
                raise ValueError(f"{name} has negative entries")
            setattr(self, name, np.maximum(arr, 0.0))


def fisher_fundamental_analytic(geom: BeamGeometry, eta: str, z):
    """Closed-form fundamental-mode Fisher information, waist-scaled."""
    zt = np.asarray(z, dtype=float) / geom.zR
    if eta in ("x", "y"):
        return 4.0 / (1.0 + zt ** 2)
    if eta == "z":
        return 4.0 * (geom.w0 / geom.zR) ** 2 * zt ** 2 / (1.0 + zt ** 2) ** 2
    raise ValueError(f"eta must be 'x', 'y' or 'z', got {eta!r}")


def fisher_numeric(density, eta0: float, step: float, dA: float,
                   norm_tol: float = 1e-6, richardson: bool = True,
                   rel_floor: float = 1e-12):
    """Fisher information of a parameterized density by central differences.

    density(eta) must return the 2D probability density sampled on a fixed
    grid with cell area dA.  The value at eta0 is checked to integrate to 1
    within norm_tol.  With richardson=True the derivative is evaluated at
    step and step/2 and a >1% disagreement raises StepSensitivityError; the
    half-step value is returned.

    Cells where the density falls below rel_floor times its maximum are
    excluded; f (dln f)^2 = (df)^2 / f vanishes there for any PSF whose
    tails decay faster than quadratically.
    """
    f0 = np.asarray(density(eta0), dtype=float)
    mass = float(f0.sum() * dA)
    if abs(mass - 1.0) > norm_tol:
        raise NormalizationError(f"density mass {mass} deviates from 1 by more than {norm_tol}")
    support = f0 > rel_floor * f0.max()

    def info(h):
        df = (np.asarray(density(eta0 + h), dtype=float)
              - np.asarray(density(eta0 - h), dtype=float)) / (2.0 * h)
        val = np.zeros_like(f0)
        val[support] = df[support] ** 2 / f0[support]
        return float(val.sum() * dA)

    coarse = info(step)
    if not richardson:
        return coarse
    fine = info(0.5 * step)
    scale = max(abs(fine), abs(coarse))
    if scale > 0 and abs(fine - coarse) > 0.01 * scale:
        raise StepSensitivityError(
            f"Fisher FD changed from {coarse:.6g} to {fine:.6g} when halving the step")
    return fine


def _density_factory(sup: LGSuperposition, geom: BeamGeometry, z: float,
                     eta: str, window_factor: float, n_grid: int):
    """Transverse photon density as a function of the emitter coordinate eta.

    The window follows the local beam radius; the sampled mass of any LG
    superposition inside radius 8 w(z) differs from the full-plane value
    only in the far Gaussian tail.
    """
    radius = window_factor * geom.beam_radius(z)
    ax = np.linspace(-radius, radius, n_grid)
    X, Y = np.meshgrid(ax, ax)
    dA = (ax[1] - ax[0]) ** 2
    # total transverse power of a unit-coefficient superposition is w0^2 in
    # this field convention, so dividing by w0^2 normalizes the density; the
    # returned values are then rescaled by w0^2 to give waist-scaled Fisher
    # information, which cancels -- work directly with |u|^2 and account for
    # both factors in dA.
    norm = geom.w0 ** 2

    def density(eta_val):
        if eta == "x":
            Xs, Ys, zs = X - eta_val, Y, z
        elif eta == "y":
            Xs, Ys, zs = X, Y - eta_val, z
        elif eta == "z":
            Xs, Ys, zs = X, Y, z - eta_val
        else:
            raise ValueError(f"eta must be 'x', 'y' or 'z', got {eta!r}")
        R = np.hypot(Xs, Ys)
        PHI = np.arctan2(Ys, Xs)
        u = superposition_field(sup, geom, R, PHI, zs)
        return np.abs(u) ** 2 / norm

    return density, dA


def fisher_numeric_mode(sup: LGSuperposition, geom: BeamGeometry, eta: str, z: float,
                        window_factor: float = 8.0, n_grid: int = 321,
                        richardson: bool = True):
    """Waist-scaled numeric Fisher information of an LG superposition."""
    density, dA = _density_factory(sup, geom, z, eta, window_factor, n_grid)
    step = 1e-4 * (geom.zR if eta == "z" else geom.w0)
    raw = fisher_numeric(density, 0.0, step, dA, richardson=richardson)
    return raw * geom.w0 ** 2


def fisher_curves_dh(geom: BeamGeometry, z_grid,
                     window_factor: float = 8.0, n_grid: int = 321):
    """Numeric Fisher curves for the double-helix and fundamental PSFs.

    Returns (dh_curve, fundamental_curve).  z_grid must stay within
    +-2 zR, where the quadrature window and step defaults are validated.
    """
    z_grid = np.asarray(z_grid, dtype=float)
    if np.any(np.abs(z_grid) > 2.0 * geom.zR + 1e-9 * geom.zR):
        raise ValueError("z_grid extends beyond 2 zR")
    dh = LGSuperposition.double_helix()
    fund = LGSuperposition(((LGIndex(l=0, p=0), 1.0),))
    curves = []
    for sup, label in ((dh, "double-helix"), (fund, "fundamental")):
        cols = {"x": [], "y": [], "z": []}
        for z in z_grid:
            for eta in cols:
                cols[eta].append(fisher_numeric_mode(
                    sup, geom, eta, float(z),
                    window_factor=window_factor, n_grid=n_grid))
        curves.append(FisherCurve(
            z_grid=z_grid, I_x=cols["x"], I_y=cols["y"], I_z=cols["z"],
            label=label,
            meta={"window_factor": window_factor, "n_grid": n_grid}))
    return curves[0], curves[1]
