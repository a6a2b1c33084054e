"""Laguerre-Gaussian modes and rotating mode superpositions.

Everything here is paraxial scalar optics in cylindrical coordinates
(r, phi, z). A mode is indexed by the azimuthal number l (any integer)
and the radial number p (non-negative); its order is n = 2p + |l|.
The field convention is

    u_lp(r, phi, z) = C_lp * (w0/w) * (sqrt(2) r/w)^|l| * exp(-(r/w)^2)
                      * L_p^|l|(2 (r/w)^2)
                      * exp(i (r/w)^2 * z/zR) * exp(i l phi - i psi(z))

with w(z) = w0 sqrt(1 + (z/zR)^2), Gouy phase psi = (n+1) arctan(z/zR),
zR = pi w0^2 / lambda and C_lp = sqrt(2 p! / (pi (p + |l|)!)).  With this
normalization the modes are orthonormal with respect to the transverse
scalar product measured in waist units, i.e. integral u* u dA = w0^2.

A superposition whose terms have a common ratio V = delta_n / delta_l
between consecutive order and azimuthal index steps rotates rigidly under
propagation: the transverse intensity pattern at z is the z = 0 pattern
scaled by w(z)/w0 and rotated by V * arctan(z/zR).  The canonical
double-helix pair (|0,0> + |2,1>)/sqrt(2) has V = 2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

__all__ = [
    "LGIndex",
    "BeamGeometry",
    "LGSuperposition",
    "RotationLaw",
    "RigidRotationResult",
    "lg_normalization",
    "lg_field",
    "superposition_field",
    "superposition_intensity",
    "rotation_angle",
    "check_rigid_rotation",
    "wrap_half_pi",
]


def wrap_half_pi(theta):
    """Wrap an angle (or array of angles) onto [-pi/2, pi/2), i.e. mod pi."""
    return (np.asarray(theta) + np.pi / 2) % np.pi - np.pi / 2


@dataclass(frozen=True, order=True)
class LGIndex:
    """Mode index pair; sort order is (order n, azimuthal l)."""

    sort_key: tuple = field(init=False, repr=False)
    l: int = 0
    p: int = 0

    def __post_init__(self):
        if self.p < 0:
            raise ValueError(f"radial index p must be >= 0, got {self.p}")
        if int(self.l) != self.l or int(self.p) != self.p:
            raise ValueError("mode indices must be integers")
        object.__setattr__(self, "sort_key", (self.n, self.l))

    @property
    def n(self) -> int:
        """Mode order n = 2p + |l| (sets the Gouy phase rate n + 1)."""
        return 2 * self.p + abs(self.l)


@dataclass(frozen=True)
class BeamGeometry:
    """Waist and wavelength of the underlying Gaussian beam (meters)."""

    w0: float
    wavelength: float

    def __post_init__(self):
        if self.w0 <= 0:
            raise ValueError(f"waist must be positive, got {self.w0}")
        if self.wavelength <= 0:
            raise ValueError(f"wavelength must be positive, got {self.wavelength}")

    @property
    def zR(self) -> float:
        """Rayleigh range pi w0^2 / lambda."""
        return math.pi * self.w0 ** 2 / self.wavelength

    def beam_radius(self, z):
        """w(z) = w0 sqrt(1 + (z/zR)^2)."""
        return self.w0 * np.sqrt(1.0 + (np.asarray(z, dtype=float) / self.zR) ** 2)

    def gouy(self, index: LGIndex, z):
        """Mode Gouy phase (n + 1) arctan(z/zR)."""
        return (index.n + 1) * np.arctan(np.asarray(z, dtype=float) / self.zR)


def lg_normalization(l: int, p: int) -> float:
    """Normalization constant C_lp = sqrt(2 p! / (pi (p + |l|)!))."""
    if p < 0:
        raise ValueError("p must be >= 0")
    return math.sqrt(2.0 * math.factorial(p) / (math.pi * math.factorial(p + abs(l))))


def _genlaguerre(p: int, alpha: float, x):
    """Generalized Laguerre polynomial L_p^alpha(x) by the three-term recurrence."""
    x = np.asarray(x, dtype=float)
    if p == 0:
        return np.ones_like(x)
    lkm1 = np.ones_like(x)          # L_0
    lk = 1.0 + alpha - x            # L_1
    for k in range(2, p + 1):
        lkm1, lk = lk, ((2 * k - 1 + alpha - x) * lk - (k - 1 + alpha) * lkm1) / k
    return lk


def lg_field(index: LGIndex, geom: BeamGeometry, r, phi, z):
    """Complex LG mode field u_lp(r, phi, z).

    Parameters
    ----------
    index : LGIndex
    geom : BeamGeometry
    r, phi, z : array_like, broadcastable
        Cylindrical coordinates in meters / radians.

    Returns
    -------
    complex ndarray with the broadcast shape of (r, phi, z).
    """
    r = np.asarray(r, dtype=float)
    phi = np.asarray(phi, dtype=float)
    z = np.asarray(z, dtype=float)
    la, p = abs(index.l), index.p

    zt = z / geom.zR
    w = geom.w0 * np.sqrt(1.0 + zt ** 2)
    rt2 = (r / w) ** 2
    radial = (
        lg_normalization(index.l, p)
        * (geom.w0 / w)
        * np.sqrt(2.0 * rt2) ** la
        * np.exp(-rt2)
        * _genlaguerre(p, la, 2.0 * rt2)
    )
    phase = rt2 * zt + index.l * phi - (index.n + 1) * np.arctan(zt)
    return radial * np.exp(1j * phase)


@dataclass(frozen=True)
class LGSuperposition:
    """Normalized coherent superposition sum_j a_j |l_j, p_j>.

    Terms are kept sorted by (n, l); repeated indices are rejected and the
    coefficient vector must satisfy sum |a_j|^2 = 1 within 1e-12.
    """

    terms: tuple  # of (LGIndex, complex)

    def __post_init__(self):
        terms = tuple(sorted(((idx, complex(a)) for idx, a in self.terms),
                             key=lambda t: t[0].sort_key))
        if not terms:
            raise ValueError("superposition needs at least one term")
        seen = {(idx.l, idx.p) for idx, _ in terms}
        if len(seen) != len(terms):
            raise ValueError("duplicate mode index in superposition")
        total = sum(abs(a) ** 2 for _, a in terms)
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"coefficients not normalized: sum |a|^2 = {total!r}")
        object.__setattr__(self, "terms", terms)

    @classmethod
    def from_amplitudes(cls, entries) -> "LGSuperposition":
        """Build from (l, p, amplitude) triples, normalizing the amplitudes."""
        entries = [(LGIndex(l=int(l), p=int(p)), complex(a)) for l, p, a in entries]
        norm = math.sqrt(sum(abs(a) ** 2 for _, a in entries))
        if norm == 0:
            raise ValueError("all coefficients vanish")
        return cls(tuple((idx, a / norm) for idx, a in entries))

    @classmethod
    def double_helix(cls) -> "LGSuperposition":
        """The canonical two-lobe pair (|0,0> + |2,1>)/sqrt(2)."""
        return cls.from_amplitudes([(0, 0, 1.0), (2, 1, 1.0)])

    @property
    def indices(self):
        return tuple(idx for idx, _ in self.terms)


def superposition_field(sup: LGSuperposition, geom: BeamGeometry, r, phi, z):
    """Complex field of the superposition at (r, phi, z)."""
    total = None
    for idx, a in sup.terms:
        contrib = a * lg_field(idx, geom, r, phi, z)
        total = contrib if total is None else total + contrib
    return total


def superposition_intensity(sup: LGSuperposition, geom: BeamGeometry, r, phi, z):
    """|sum_j a_j u_j|^2 at (r, phi, z)."""
    return np.abs(superposition_field(sup, geom, r, phi, z)) ** 2


@dataclass(frozen=True)
class RigidRotationResult:
    rigid: bool
    V: Fraction | None
    reason: str | None = None

    def __bool__(self):
        return self.rigid


def check_rigid_rotation(sup: LGSuperposition) -> RigidRotationResult:
    """Decide whether `sup` rotates rigidly under propagation.

    Sorting the terms by order n, the pattern is scaled-rigid iff every
    consecutive pair has the same finite rotation rate
    V_j = (n_{j+1} - n_j) / (l_{j+1} - l_j).  The comparison is exact
    rational arithmetic; no floating-point tolerance is involved.

    Returns a result whose V is the common rate as a Fraction when rigid.
    Single-term superpositions are rigid with V = 0 (stationary intensity).
    """
    idxs = sup.indices
    if len(idxs) == 1:
        return RigidRotationResult(True, Fraction(0))
    rates = []
    for a, b in zip(idxs[:-1], idxs[1:]):
        dn, dl = b.n - a.n, b.l - a.l
        if dl == 0:
            if dn == 0:
                # same n, same l cannot happen (duplicates rejected upstream)
                continue
            return RigidRotationResult(
                False, None, "consecutive terms share l but differ in n (beating, not rotation)")
        rates.append(Fraction(dn, dl))
    if not rates:
        return RigidRotationResult(True, Fraction(0))
    if all(v == rates[0] for v in rates):
        return RigidRotationResult(True, rates[0])
    return RigidRotationResult(
        False, None, f"rotation rates differ between consecutive terms: {rates}")


@dataclass(frozen=True)
class RotationLaw:
    """theta(z) = V arctan(z/zR) + alpha (angles in radians, z in meters)."""

    V: float
    zR: float
    alpha: float = 0.0

    def __post_init__(self):
        if self.zR <= 0:
            raise ValueError(f"zR must be positive, got {self.zR}")

    def theta(self, z):
        return self.V * np.arctan(np.asarray(z, dtype=float) / self.zR) + self.alpha

    def z(self, theta):
        """Inverse map z = zR tan((theta - alpha)/V) on the principal branch.

        theta - alpha is wrapped mod pi onto [-pi/2, pi/2) first, since a
        two-lobe pattern only defines its axis modulo a half turn.
        """
        arg = wrap_half_pi(np.asarray(theta, dtype=float) - self.alpha) / self.V
        return self.zR * np.tan(arg)

    def dtheta_dz(self, z):
        zt = np.asarray(z, dtype=float) / self.zR
        return self.V / (self.zR * (1.0 + zt ** 2))


def rotation_angle(sup: LGSuperposition, geom: BeamGeometry, z, alpha=None):
    """Pattern orientation theta(z) = V arctan(z/zR) + alpha of a rigid superposition.

    alpha defaults to the azimuth of the leading cross-term maximum at z = 0,
    -(arg a_2 - arg a_1)/(l_2 - l_1) for the first consecutive term pair with
    l_2 != l_1 (zero for real equal-phase coefficients).  The returned angle is
    not wrapped, so differences such as theta(zR) - theta(0) = V pi/4 are exact.
    """
    res = check_rigid_rotation(sup)
    if not res.rigid:
        raise ValueError(f"superposition does not rotate rigidly: {res.reason}")
    if alpha is None:
        alpha = 0.0
        for (ia, aa), (ib, ab) in zip(sup.terms[:-1], sup.terms[1:]):
            if ib.l != ia.l:
                alpha = -(np.angle(ab) - np.angle(aa)) / (ib.l - ia.l)
                break
    return float(res.V) * np.arctan(np.asarray(z, dtype=float) / geom.zR) + alpha
