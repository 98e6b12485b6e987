"""Linearized dynamics along billiard trajectories.

Jacobians are expressed in transverse Jacobi coordinates (perpendicular
displacement, perpendicular velocity).  Only conjugation-invariant
quantities (trace, multipliers, det(1 - P^k)) are exported downstream, so
the coordinate choice is immaterial.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional

import numpy as np

from .errors import NearGrazingError, ParabolicOrbitError
from .geometry import GRAZING_TOL, ObstacleSet

if TYPE_CHECKING:  # pragma: no cover
    from .orbits import PeriodicOrbit

PARABOLIC_TOL = 1e-10


def free_flight_matrix(length: float) -> np.ndarray:
    """Transverse Jacobian of a free flight: [[1, L], [0, 1]]."""
    return np.array([[1.0, length], [0.0, 1.0]])


def collision_matrix(curvature: float, cos_incidence: float,
                     grazing_tol: float = GRAZING_TOL) -> np.ndarray:
    """Transverse Jacobian of a dispersing reflection: -[[1,0],[2k/c, 1]].

    Diverges as cos(incidence) -> 0; near-grazing input is an error rather
    than a huge matrix.
    """
    if cos_incidence < grazing_tol:
        raise NearGrazingError(
            f"cos(incidence) = {cos_incidence:.3e} below tolerance {grazing_tol:.1e}"
        )
    return -np.array([[1.0, 0.0], [2.0 * curvature / cos_incidence, 1.0]])


def cycle_monodromy(obstacles: ObstacleSet, symbols: tuple[int, ...],
                    leg_lengths, cos_incidences) -> np.ndarray:
    """Ordered flight/reflection product around a cycle given its raw data."""
    n = len(symbols)
    m = np.eye(2)
    for k in range(n):
        nxt = (k + 1) % n
        disc = obstacles.discs[symbols[nxt]]
        flight = free_flight_matrix(float(leg_lengths[k]))
        bounce = collision_matrix(disc.curvature, float(cos_incidences[nxt]))
        m = bounce @ flight @ m
    return m


def monodromy(obstacles: ObstacleSet, orbit: "PeriodicOrbit") -> np.ndarray:
    """Primitive-period transverse Jacobian, based just after the first bounce.

    Ordered product of reflection and flight factors around the cycle; the
    determinant is 1 up to rounding.
    """
    return cycle_monodromy(obstacles, orbit.itinerary.symbols,
                           orbit.leg_lengths, orbit.cos_incidences)


def monodromy_det_defect(obstacles: ObstacleSet, orbit: "PeriodicOrbit",
                         dps: int = 40) -> float:
    """|det - 1| of the cycle Jacobian product carried in extended precision.

    Entry rounding alone drifts the det of the float64 product by about
    eps * Lambda^2, swamping the symplecticity signal for strongly
    expanding cycles; the check is meaningful only on the unrounded
    product, which this routine evaluates with mpmath.
    """
    import mpmath as mp

    n = len(orbit.itinerary)
    with mp.workdps(dps):
        a, b, c, d = mp.mpf(1), mp.mpf(0), mp.mpf(0), mp.mpf(1)
        for k in range(n):
            nxt = (k + 1) % n
            length = mp.mpf(float(orbit.leg_lengths[k]))
            # flight [[1, L], [0, 1]]
            a, b = a + length * c, b + length * d
            kappa_c = mp.mpf(2.0 * obstacles.discs[orbit.itinerary.symbols[nxt]].curvature) \
                / mp.mpf(float(orbit.cos_incidences[nxt]))
            # reflection -[[1, 0], [q, 1]]
            a, b, c, d = -a, -b, -(kappa_c * a) - c, -(kappa_c * b) - d
        return float(abs(a * d - b * c - 1))


def fd_monodromy(obstacles: ObstacleSet, orbit: "PeriodicOrbit",
                 h: Optional[float] = None) -> np.ndarray:
    """Finite-difference Jacobian of the full-period boundary return map.

    Independent verification oracle for monodromy(): the two matrices are
    conjugate (Birkhoff vs Jacobi coordinates), so traces and determinants
    must agree.  The default step shrinks with the orbit's multiplier so
    the perturbed trajectories stay inside the linear regime of strongly
    expanding cycles; the multiplier is used for step sizing only.
    """
    from .flow import BirkhoffCoord, birkhoff_coord, boundary_map

    if h is None:
        h = min(1e-5, 1e-4 / abs(orbit.hyp.Lambda))
    n = len(orbit.itinerary)
    base = birkhoff_coord(obstacles, orbit.itinerary.symbols[0],
                          orbit.points[0], orbit.states[0].v)
    circumference = 2.0 * math.pi * obstacles.discs[base.obstacle].radius

    def return_map(s: float, p: float) -> np.ndarray:
        bc = BirkhoffCoord(base.obstacle, s, p)
        for _ in range(n):
            bc = boundary_map(obstacles, bc)
            if bc is None:
                raise NearGrazingError("perturbed orbit escaped during differentiation")
        # unwrap the arclength around the base point: the return lands near
        # base.s modulo the circumference, possibly across the branch cut
        s_out = base.s + ((bc.s - base.s + circumference / 2) % circumference
                          - circumference / 2)
        return np.array([s_out, bc.p])

    j = np.empty((2, 2))
    j[:, 0] = (return_map(base.s + h, base.p) - return_map(base.s - h, base.p)) / (2 * h)
    j[:, 1] = (return_map(base.s, base.p + h) - return_map(base.s, base.p - h)) / (2 * h)
    return j


def multiplier(trace: float) -> float:
    """Signed expanding eigenvalue from the trace of a det-1 matrix."""
    if abs(trace) <= 2.0 + PARABOLIC_TOL:
        raise ParabolicOrbitError(f"|trace| = {abs(trace):.12g} is not > 2")
    lam_mag = (abs(trace) + math.sqrt(trace * trace - 4.0)) / 2.0
    return math.copysign(lam_mag, trace)


def log_abs_det_id_minus_power(m: np.ndarray, k: int) -> tuple[float, float]:
    """(log magnitude, sign) of det(1 - P^k) via the eigenvalues of P.

    det(1 - P^k) = (1 - L^k)(1 - L^-k) for eigenvalues L, 1/L; the log-
    domain form stays finite when |L|^k overflows doubles.
    """
    lam = multiplier(float(np.trace(m)))
    log_mag_lam = math.log(abs(lam))
    sign = 1.0 if lam > 0 else (-1.0 if k % 2 else 1.0)
    lam_minus_k = sign * math.exp(-k * log_mag_lam)
    # |det| = |L|^k (1 - L^-k)^2 with the signed L^-k; 1 - L^-k > 0 always.
    log_mag = k * log_mag_lam + 2.0 * math.log1p(-lam_minus_k)
    det_sign = 1.0 if (lam < 0 and k % 2 == 1) else -1.0
    return log_mag, det_sign


def det_id_minus_power(m: np.ndarray, k: int) -> float:
    """|det(1 - P^k)| as a plain scalar (inf if it overflows doubles)."""
    log_mag, _ = log_abs_det_id_minus_power(m, k)
    try:
        return math.exp(log_mag)
    except OverflowError:
        return math.inf


@dataclass(frozen=True)
class HyperbolicData:
    """Eigen-data of a hyperbolic cycle Jacobian.

    Lambda is the signed expanding multiplier (|Lambda| > 1); E_u / E_s the
    unit eigenvectors in Jacobi coordinates; lyapunov = ln|Lambda| / T.
    """

    Lambda: float
    trace: float
    E_s: np.ndarray
    E_u: np.ndarray
    lyapunov: float


def _eigenvector(m: np.ndarray, eigenvalue: float) -> np.ndarray:
    a, b = m[0]
    c, d = m[1]
    v1 = np.array([b, eigenvalue - a])
    v2 = np.array([eigenvalue - d, c])
    v = v1 if np.linalg.norm(v1) >= np.linalg.norm(v2) else v2
    return v / float(np.linalg.norm(v))


def hyperbolic_data(m: np.ndarray, period: float) -> HyperbolicData:
    """Multiplier, eigendirections and Lyapunov exponent of a cycle matrix."""
    trace = float(np.trace(m))
    lam = multiplier(trace)
    return HyperbolicData(
        Lambda=lam,
        trace=trace,
        E_s=_eigenvector(m, 1.0 / lam),
        E_u=_eigenvector(m, lam),
        lyapunov=math.log(abs(lam)) / period,
    )
