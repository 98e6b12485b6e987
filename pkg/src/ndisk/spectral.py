"""Weighted zeta functions, the Fredholm determinant, resonances, resolvent.

The weighted zeta function is a sum over closed trajectories (primitive
orbits and their repetitions)

    Z_f(lambda) = sum_gamma  sigma^(k n) e^(-lambda k T) (int_gamma# f)
                  / |det(1 - P^k)| ,

with sigma the per-reflection factor of the weight.  Repetitions are summed
in closed form per orbit: expanding 1/|det(1 - P^k)| in powers of the
inverse multiplier turns the k-sum into geometric series, which reproduces
the raw sum exactly inside its half-plane of convergence and continues it
meromorphically past the per-orbit poles.  This matters because residue
contours around resonances necessarily cross the raw sum's abscissa.

The determinant d(lambda) = exp(-sum_gamma# sum_k (1/k) e^(-lambda k T)
/ |det(1 - P^k)|) is evaluated through its cumulant (cycle-order) expansion
truncated at total topological length max_len.  The expansion's shadowing
cancellations exceed double precision quickly, so the recursion runs in
mpmath with working precision scaled to the truncation order.  Zeros of d
are the resonances; Z_1 = d'/d.

For multi-orbit systems the truncated *orbit sum* for Z_f is analytic at
collective resonances (its poles sit on per-orbit lattices only), so
residues there are extracted from the determinant-quotient continuation
Z_f = N_f/d, whose numerator is the weighted derivative of the cumulant
expansion.  Both evaluators agree in the common convergence region and are
cross-checked in the tests.
"""

from __future__ import annotations

import cmath
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import mpmath as mp
import numpy as np

from .errors import (
    EmptyDbError,
    NearbyResonanceError,
    NonConvergentError,
)
from .flow import (
    EscapeRadius,
    PhaseState,
    Termination,
    Time,
    advance,
)
from .geometry import GRAZING_TOL, ObstacleSet
from .orbits import OrbitDb, PeriodicOrbit
from .weights import Weight, integrate_along

MAX_EXPANSION_J = 400          # cap on the inverse-multiplier expansion index
STABILITY_TOL = 1e-3           # |zero(N) - zero(N-1)| flag threshold
NEWTON_RESIDUAL = 1e-12        # |d| at a polished zero


@dataclass(frozen=True)
class ZetaConfig:
    """Truncation parameters for zeta/determinant sums."""

    max_len: int = 8
    max_rep: int = 200
    tail_tol: float = 1e-16

    def __post_init__(self):
        if self.max_len < 2:
            raise ValueError("max_len must be >= 2")
        if self.max_rep < 1:
            raise ValueError("max_rep must be >= 1")

    def working_dps(self) -> int:
        # cancellation depth in the cumulant recursion grows with the
        # truncation order; scale the precision with it
        return max(50, 4 * self.max_len)


@dataclass(frozen=True)
class Region:
    """A closed axis-aligned rectangle in the complex plane."""

    re_min: float
    re_max: float
    im_min: float
    im_max: float

    def __post_init__(self):
        if not (self.re_min < self.re_max and self.im_min < self.im_max):
            raise ValueError("region must have positive extent")

    def contains(self, z: complex, pad: float = 0.0) -> bool:
        return (self.re_min - pad <= z.real <= self.re_max + pad
                and self.im_min - pad <= z.imag <= self.im_max + pad)


@dataclass(frozen=True)
class Resonance:
    """A zero of the determinant with its residue data."""

    lambda0: complex
    residue_Z1: complex
    newton_residual: float
    stable_across_truncation: bool
    multiplicity: int


def _active_orbits(db: OrbitDb, cfg: ZetaConfig) -> list[PeriodicOrbit]:
    orbits = [o for o in db.orbits() if len(o.itinerary) <= cfg.max_len]
    if not orbits:
        raise EmptyDbError("orbit database has no entries within the truncation")
    return orbits


def convergence_abscissa(db: OrbitDb, cfg: ZetaConfig) -> float:
    """Heuristic: -min orbit Lyapunov exponent bounds the safe half-plane."""
    orbits = _active_orbits(db, cfg)
    return -min(o.hyp.lyapunov for o in orbits)


# --- the weighted zeta function (orbit sum, repetitions resummed) ---------------

def zeta_weighted(lam: complex, weight: Weight, db: OrbitDb, cfg: ZetaConfig) -> complex:
    """Orbit sum for Z_f(lambda) with the repetition sum in closed form.

    Per orbit and expansion index j, repetitions contribute
    (j+1) w_j / (1 - w_j) with w_j = sigma^n sign(Lambda)^j e^(-lambda T)
    |Lambda|^(-(j+1)); the j-series is truncated once a term falls below
    tail_tol of the accumulated value.  Warns outside the heuristic
    convergence half-plane of the orbit sum.
    """
    orbits = _active_orbits(db, cfg)
    if complex(lam).real <= convergence_abscissa(db, cfg):
        warnings.warn(
            "Re(lambda) at or below the orbit-sum convergence heuristic; "
            "values are the per-orbit meromorphic continuation",
            stacklevel=2,
        )
    lam = complex(lam)
    total = 0.0 + 0.0j
    for orbit in orbits:
        amplitude = integrate_along(orbit, weight)
        if amplitude == 0:
            continue
        total += amplitude * _repetition_series(lam, orbit, weight.reflection_factor, cfg)
    return total


def _repetition_series(lam: complex, orbit: PeriodicOrbit, sigma: complex,
                       cfg: ZetaConfig) -> complex:
    n = len(orbit.itinerary)
    lam_mag = abs(orbit.hyp.Lambda)
    sign = 1.0 if orbit.hyp.Lambda > 0 else -1.0
    z = (sigma ** n) * cmath.exp(-lam * orbit.T_prim)
    acc = 0.0 + 0.0j
    for j in range(MAX_EXPANSION_J):
        w = z * (sign ** j) * lam_mag ** (-(j + 1))
        if w == 1.0:
            raise ZeroDivisionError("lambda sits exactly on a per-orbit pole")
        term = (j + 1) * w / (1.0 - w)
        acc += term
        if abs(term) < cfg.tail_tol * max(abs(acc), 1e-300):
            break
    return acc


# --- determinant via the cumulant expansion -------------------------------------

class CycleExpansion:
    """Cumulant expansion of the determinant for one database and weight.

    Precomputes per (orbit, repetition) constants; evaluation groups terms
    by total topological length m = k * n and runs the exp-of-series
    recursion in mpmath at a precision scaled to max_len.
    """

    def __init__(self, db: OrbitDb, cfg: ZetaConfig, weight: Optional[Weight] = None):
        self.cfg = cfg
        self.dps = cfg.working_dps()
        orbits = _active_orbits(db, cfg)
        self.max_period = max(o.T_prim for o in orbits)
        # rows: (m, 1/k, k*T, log|det(1-P^k)|, sigma^(k n) * A), with the
        # per-repetition factors derived once in mpmath: independently
        # float64-rounded factors would break the shadowing cancellations
        # of the cumulant recursion (they need coherence far beyond 1e-16)
        self.rows: list[tuple[int, "mp.mpf", "mp.mpf", "mp.mpf", complex]] = []
        with mp.workdps(self.dps):
            for orbit in orbits:
                n = len(orbit.itinerary)
                if weight is not None:
                    amplitude = integrate_along(orbit, weight)
                    sigma = weight.reflection_factor
                else:
                    amplitude = 1.0 + 0.0j
                    sigma = 1.0 + 0.0j
                lam_abs = mp.mpf(abs(orbit.hyp.Lambda))
                log_lam = mp.log(lam_abs)
                for k in range(1, min(cfg.max_rep, cfg.max_len // n) + 1):
                    sign = 1.0 if orbit.hyp.Lambda > 0 else (-1.0 if k % 2 else 1.0)
                    log_det = k * log_lam + 2 * mp.log1p(-sign * lam_abs ** (-k))
                    self.rows.append(
                        (k * n, mp.mpf(1) / k, k * mp.mpf(orbit.T_prim), log_det,
                         complex(sigma ** (k * n)) * complex(amplitude))
                    )

    def _evaluate(self, lam, want_deriv: bool, want_weighted: bool):
        """One cumulant-recursion pass; returns (d, d', N_f) with None slots."""
        with mp.workdps(self.dps):
            lam = mp.mpc(lam)
            n_max = self.cfg.max_len
            s: dict[int, mp.mpc] = {}
            sp: dict[int, mp.mpc] = {}
            sw: dict[int, mp.mpc] = {}
            for m, inv_k, k_t, log_det, coeff in self.rows:
                base = mp.exp(-lam * k_t - log_det)
                term = inv_k * base
                s[m] = s.get(m, 0) + term
                if want_deriv:
                    sp[m] = sp.get(m, 0) - k_t * term
                if want_weighted:
                    sw[m] = sw.get(m, 0) + mp.mpc(coeff) * base
            zero = mp.mpc(0)
            q = [zero] * (n_max + 1)
            qp = [zero] * (n_max + 1)
            qw = [zero] * (n_max + 1)
            q[0] = mp.mpc(1)
            for m in range(2, n_max + 1):
                acc = zero
                accp = zero
                accw = zero
                for l in s:
                    if l > m:
                        continue
                    acc += l * s[l] * q[m - l]
                    if want_deriv:
                        accp += l * (sp[l] * q[m - l] + s[l] * qp[m - l])
                    if want_weighted:
                        accw += l * (sw[l] * q[m - l] + s[l] * qw[m - l])
                q[m] = -acc / m
                if want_deriv:
                    qp[m] = -accp / m
                if want_weighted:
                    qw[m] = -accw / m
            d = sum(q)
            d_prime = sum(qp) if want_deriv else None
            numerator = -sum(qw) if want_weighted else None
            return d, d_prime, numerator

    def det_with_derivative(self, lam) -> tuple[mp.mpc, mp.mpc]:
        """d(lambda) and d'(lambda) from the truncated cumulant recursion."""
        d, dp, _ = self._evaluate(lam, want_deriv=True, want_weighted=False)
        return d, dp

    def weighted_numerator(self, lam) -> mp.mpc:
        """N_f(lambda) with Z_f = N_f / d; reduces to d' for weight 1."""
        _, _, numerator = self._evaluate(lam, want_deriv=False, want_weighted=True)
        return numerator

    def det(self, lam) -> complex:
        d, _, _ = self._evaluate(lam, want_deriv=False, want_weighted=False)
        return complex(d)

    def quotient(self, lam) -> complex:
        """The continuation Z_f(lambda) = N_f(lambda) / d(lambda)."""
        d, _, numerator = self._evaluate(lam, want_deriv=False, want_weighted=True)
        with mp.workdps(self.dps):
            return complex(numerator / d)


def fredholm_det(lam: complex, db: OrbitDb, cfg: ZetaConfig) -> complex:
    """d(lambda); an entire truncation whose zeros approximate the resonances."""
    return CycleExpansion(db, cfg).det(lam)


def zeta_quotient(lam: complex, weight: Weight, db: OrbitDb, cfg: ZetaConfig) -> complex:
    """Determinant-quotient continuation of Z_f, valid at the resonances."""
    return CycleExpansion(db, cfg, weight).quotient(lam)


# --- resonance search -----------------------------------------------------------

class ContourThroughZero(RuntimeError):
    """Internal: the determinant (nearly) vanished on a winding contour."""


def _winding(values: Sequence[complex]) -> float:
    total = 0.0
    prev = None
    for v in values:
        a = abs(v)
        if not a > 0 or not math.isfinite(a):
            raise ContourThroughZero
        ang = cmath.phase(v)
        if prev is not None:
            delta = ang - prev
            while delta > math.pi:
                delta -= 2 * math.pi
            while delta < -math.pi:
                delta += 2 * math.pi
            total += delta
        prev = ang
    return total / (2 * math.pi)


def _edge_values(f_cached: Callable[[complex], complex], a: complex, b: complex,
                 min_scale: float) -> list[complex]:
    """Values of f along [a, b], refined until adjacent phase jumps < pi/2."""
    points = [a, b]
    values = [f_cached(a), f_cached(b)]
    for _ in range(14):
        refined_pts: list[complex] = []
        refined_vals: list[complex] = []
        needs_more = False
        for i in range(len(points) - 1):
            refined_pts.append(points[i])
            refined_vals.append(values[i])
            v0, v1 = values[i], values[i + 1]
            if abs(v0) < min_scale or abs(v1) < min_scale:
                raise ContourThroughZero
            jump = abs(cmath.phase(v1 / v0))
            if jump > math.pi / 2:
                mid = 0.5 * (points[i] + points[i + 1])
                refined_pts.append(mid)
                refined_vals.append(f_cached(mid))
                needs_more = True
        refined_pts.append(points[-1])
        refined_vals.append(values[-1])
        points, values = refined_pts, refined_vals
        if not needs_more:
            return values
    raise ContourThroughZero


def _cell_winding(f_cached, re0, re1, im0, im1, min_scale) -> int:
    corners = [complex(re0, im0), complex(re1, im0), complex(re1, im1),
               complex(re0, im1), complex(re0, im0)]
    values: list[complex] = []
    for a, b in zip(corners[:-1], corners[1:]):
        edge = _edge_values(f_cached, a, b, min_scale)
        values.extend(edge[:-1])
    values.append(values[0])
    w = _winding(values)
    w_int = round(w)
    if abs(w - w_int) > 0.2:
        raise ContourThroughZero
    return int(w_int)


def _circle_winding(expansion: "CycleExpansion", center: complex, radius: float,
                    min_scale: float = 1e-280) -> Optional[int]:
    """Winding of the determinant around a small circle (zero multiplicity)."""
    values = {}

    def sample(idx: int, total: int) -> complex:
        key = idx * (1 << 20) // total  # index on a virtual fine ring
        if key not in values:
            ang = 2.0 * math.pi * key / (1 << 20)
            values[key] = expansion.det(center + radius * cmath.exp(1j * ang))
        return values[key]

    total = 16
    for _ in range(8):
        ring = [sample(i, total) for i in range(total)] + [sample(0, total)]
        try:
            w = _winding(ring)
        except ContourThroughZero:
            return None
        if abs(w - round(w)) < 0.2:
            # refine once more to confirm the reading is converged
            finer = [sample(i, total * 2) for i in range(total * 2)] + [sample(0, total * 2)]
            try:
                w2 = _winding(finer)
            except ContourThroughZero:
                return None
            if round(w2) == round(w):
                return int(round(w))
        total *= 2
    return None


def find_resonances(
    region: Region,
    db: OrbitDb,
    cfg: ZetaConfig,
    merge_tol: float = 1e-8,
    rng_seed: int = 0,
) -> list[Resonance]:
    """Zeros of the determinant inside a rectangle, with residues of Z_1.

    Coarse subrectangle scan (imaginary step bounded by 2 pi / (8 T_max)),
    argument-principle winding per cell, multiplicity-aware Newton polish
    to |d| < 1e-12, duplicate merge, and a truncation-stability flag from
    re-polishing against the max_len - 1 expansion.
    """
    expansion = CycleExpansion(db, cfg)
    rng = np.random.default_rng(rng_seed)
    step = 2.0 * math.pi / (8.0 * expansion.max_period)
    n_re = max(1, math.ceil((region.re_max - region.re_min) / step))
    n_im = max(1, math.ceil((region.im_max - region.im_min) / step))
    d_re = (region.re_max - region.re_min) / n_re
    d_im = (region.im_max - region.im_min) / n_im

    cache: dict[complex, complex] = {}

    def f_cached(z: complex) -> complex:
        if z not in cache:
            cache[z] = expansion.det(z)
        return cache[z]

    candidates: list[tuple[complex, int]] = []
    for i in range(n_re):
        for j in range(n_im):
            re0 = region.re_min + i * d_re
            im0 = region.im_min + j * d_im
            rect = (re0, re0 + d_re, im0, im0 + d_im)
            winding = None
            for attempt in range(4):
                try:
                    winding = _cell_winding(f_cached, *rect, min_scale=1e-280)
                    break
                except ContourThroughZero:
                    # jitter the contour; Newton + merge dedup any overlap
                    pad = (0.08 + 0.05 * attempt) * min(d_re, d_im)
                    eps = rng.uniform(0.3, 1.0)
                    rect = (rect[0] - pad * eps, rect[1] + pad,
                            rect[2] - pad, rect[3] + pad * eps)
            if winding is None:
                raise NonConvergentError(
                    f"winding undetermined near re={re0:.4g}, im={im0:.4g}"
                )
            if winding > 0:
                center = complex(re0 + d_re / 2, im0 + d_im / 2)
                candidates.append((center, winding))

    zeros: list[tuple[complex, int, float]] = []
    cluster_tol = max(merge_tol, 1e-6)
    for start, mult in candidates:
        polished = _polish_zero(expansion, start, mult)
        for _ in range(3):
            if polished is not None:
                break
            jittered = start + complex(rng.uniform(-0.3, 0.3) * d_re,
                                       rng.uniform(-0.3, 0.3) * d_im)
            polished = _polish_zero(expansion, jittered, mult)
        if polished is None:
            continue
        lam, residual = polished
        if not region.contains(lam, pad=max(d_re, d_im)):
            continue
        # merge duplicates; a truncation-split multiple zero is a cluster
        # of simple zeros below cluster_tol and counts as one resonance
        for idx, (other, om, orres) in enumerate(zeros):
            if abs(other - lam) < cluster_tol:
                if residual < orres:
                    zeros[idx] = (lam, max(om, mult), residual)
                else:
                    zeros[idx] = (other, max(om, mult), orres)
                break
        else:
            zeros.append((lam, mult, residual))

    zeros = [(z, m, r) for (z, m, r) in zeros if region.contains(z, pad=1e-9)]
    zeros.sort(key=lambda t: (-t[0].real, t[0].imag))

    # cell windings split across jittered neighbours when a zero sits on a
    # grid line; settle each multiplicity on a small circle that encloses
    # the whole cluster
    settled = []
    for lam, mult, residual in zeros:
        min_dist = min((abs(lam - z) for z, _, _ in zeros if z != lam), default=math.inf)
        radius = max(10.0 * cluster_tol, min(1e-3, 0.3 * min_dist))
        confirmed = _circle_winding(expansion, lam, radius)
        settled.append((lam, confirmed if confirmed else mult, residual))
    zeros = settled

    reduced_cfg = None
    reduced = None
    if cfg.max_len >= 3:
        try:
            reduced_cfg = ZetaConfig(cfg.max_len - 1, cfg.max_rep, cfg.tail_tol)
            reduced = CycleExpansion(db, reduced_cfg)
        except EmptyDbError:
            reduced = None

    out: list[Resonance] = []
    locations = [z for z, _, _ in zeros]
    for lam, mult, residual in zeros:
        stable = False
        if reduced is not None:
            repolished = _polish_zero(reduced, lam, mult)
            if repolished is not None:
                stable = abs(repolished[0] - lam) <= STABILITY_TOL * max(1.0, abs(lam))
        others = [z for z in locations if z != lam]
        radius = 0.45 * min((abs(lam - z) for z in others), default=math.inf)
        radius = min(radius if math.isfinite(radius) else 0.1, 0.1)
        res_z1 = residue(Weight.one(), lam, radius, db, cfg)
        out.append(Resonance(lam, res_z1, residual, stable, mult))
    return out


def _polish_zero(expansion: CycleExpansion, start: complex, multiplicity: int,
                 max_iter: int = 100) -> Optional[tuple[complex, float]]:
    # truncation splits a multiplicity-m zero into a cluster of simple
    # zeros of diameter ~ (residual/C)^(1/m); any cluster member is a
    # valid representative, so |d| is the only convergence criterion and
    # cluster members are merged downstream
    lam = mp.mpc(start)
    for _ in range(max_iter):
        d, dp = expansion.det_with_derivative(lam)
        if abs(d) < NEWTON_RESIDUAL:
            return complex(lam), float(abs(d))
        if dp == 0:
            return None
        with mp.workdps(expansion.dps):
            step = multiplicity * d / dp
        if abs(step) > 10.0 * (1.0 + abs(lam)):
            return None  # ran away from the basin; caller retries jittered
        lam = lam - step
    return None


def determinant_grid(region: Region, db: OrbitDb, cfg: ZetaConfig,
                     n_re: int = 40, n_im: int = 40) -> list[tuple[float, float, complex]]:
    """d(lambda) sampled on a regular grid, for external contour plotting."""
    expansion = CycleExpansion(db, cfg)
    out = []
    for re in np.linspace(region.re_min, region.re_max, n_re):
        for im in np.linspace(region.im_min, region.im_max, n_im):
            out.append((float(re), float(im), expansion.det(complex(re, im))))
    return out


# --- residues --------------------------------------------------------------------

def residue(
    weight: Weight,
    lambda0: complex,
    radius: float,
    db: OrbitDb,
    cfg: ZetaConfig,
    order: int = 0,
    resonances: Optional[Sequence[complex]] = None,
    method: str = "quotient",
) -> complex:
    """(1/2 pi i) times the contour integral of Z_f(lambda)(lambda-lambda0)^order.

    Trapezoidal rule on the circle (spectrally accurate for analytic
    integrands), 64 nodes doubled until 1e-10 relative agreement.  method
    "quotient" contours the determinant-quotient continuation (valid at
    collective resonances); "orbit-sum" contours the resummed orbit sum
    (exact for single-orbit systems, cross-check route).
    """
    if resonances is not None:
        for other in resonances:
            dist = abs(complex(other) - complex(lambda0))
            if 1e-12 < dist < 2.0 * radius:
                raise NearbyResonanceError(
                    f"resonance at {other} within 2r of {lambda0}"
                )
    if method == "quotient":
        expansion = CycleExpansion(db, cfg, weight)
        evaluate = expansion.quotient
    elif method == "orbit-sum":
        def evaluate(z: complex) -> complex:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                return zeta_weighted(z, weight, db, cfg)
    else:
        raise ValueError(f"unknown residue method {method!r}")

    lambda0 = complex(lambda0)
    nodes = 64
    previous = None
    cache: dict[int, complex] = {}  # key: angle index on the finest (8192) ring

    def sample(idx: int) -> complex:
        if idx not in cache:
            ang = 2.0 * math.pi * idx / 8192
            z = lambda0 + radius * cmath.exp(1j * ang)
            cache[idx] = evaluate(z) * cmath.exp(1j * ang) * (z - lambda0) ** order
        return cache[idx]

    while nodes <= 8192:
        stride = 8192 // nodes
        total = sum(sample(i * stride) for i in range(nodes))
        estimate = (radius / nodes) * total
        if previous is not None and abs(estimate - previous) <= 1e-10 * max(abs(estimate), 1e-12):
            return estimate
        previous = estimate
        nodes *= 2
    raise NonConvergentError("residue contour did not stabilize by 8192 nodes")


# --- the quadrature resolvent -----------------------------------------------------

def radial_cutoff(r: float, r_dom: float) -> float:
    """Standardized C-infinity bump: 1 inside 0.8 r_dom, 0 outside 0.95 r_dom."""
    r0 = 0.8 * r_dom
    width = 0.15 * r_dom
    if r <= r0:
        return 1.0
    u = (r - r0) / width
    if u >= 1.0:
        return 0.0
    return math.exp(1.0 - 1.0 / (1.0 - u * u))


def _radial_cutoff_arrays(r: np.ndarray, r_dom: float) -> np.ndarray:
    r0 = 0.8 * r_dom
    width = 0.15 * r_dom
    u = (r - r0) / width
    out = np.zeros_like(r)
    out[u <= 0.0] = 1.0
    mid = (u > 0.0) & (u < 1.0)
    um = u[mid]
    out[mid] = np.exp(1.0 - 1.0 / (1.0 - um * um))
    return out


@dataclass(frozen=True)
class ResolventValue:
    value: complex
    tau_minus: float               # backward escape time (<= 0), -inf if trapped
    grazing_truncated: bool = False
    bounce_truncated: bool = False


_RES_NODES, _RES_WEIGHTS = np.polynomial.legendre.leggauss(16)


def resolvent_apply(
    obstacles: ObstacleSet,
    lam: complex,
    weight: Weight,
    state: PhaseState,
    r_dom: Optional[float] = None,
    dt: float = 0.25,
    max_bounces: int = 10_000,
    grazing_tol: float = GRAZING_TOL,
) -> ResolventValue:
    """Backward escape-time Laplace transform of the weight at one state.

    Integrates e^(-lambda t) (f * cutoff)(backward orbit) over t in
    [0, -tau-], leg by leg with composite 16-node Gauss-Legendre panels of
    width <= dt.  The standardized radial cutoff makes the integrand vanish
    before the escape sphere, so the value is insensitive to the exact
    escape bookkeeping; a grazing hit truncates the integral and is
    flagged.
    """
    r_dom = r_dom if r_dom is not None else obstacles.default_domain_radius()
    centroid = obstacles.centroid
    lam = complex(lam)
    run = advance(obstacles, state.reversed(), EscapeRadius(r_dom),
                  grazing_tol=grazing_tol, max_bounces=max_bounces)

    # legs of the reversed run: (start time, start point, direction, duration)
    legs = []
    t_prev = 0.0
    x_prev = state.x
    for coll in run.collisions:
        legs.append((t_prev, x_prev, coll.incoming_v, coll.time - t_prev))
        t_prev, x_prev = coll.time, coll.point
    legs.append((t_prev, x_prev, run.final.v, run.elapsed - t_prev))

    total = 0.0 + 0.0j
    for t0, origin, direction, duration in legs:
        if duration <= 0:
            continue
        if lam.real > 0 and math.exp(-lam.real * t0) < 1e-18 * (1.0 + abs(total)):
            break
        panels = max(1, math.ceil(duration / dt))
        edges = np.linspace(0.0, duration, panels + 1)
        mid = 0.5 * (edges[:-1] + edges[1:])
        half = 0.5 * (edges[1] - edges[0])
        ts = (mid[:, None] + half * _RES_NODES[None, :]).ravel()
        xs = origin[0] + ts * direction[0]
        ys = origin[1] + ts * direction[1]
        # the backward orbit of (x, v) at time t is the reversed forward
        # orbit of (x, -v): velocities flip sign
        vxs = np.full_like(ts, -direction[0])
        vys = np.full_like(ts, -direction[1])
        values = weight.eval_arrays(xs, ys, vxs, vys)
        rr = np.hypot(xs - centroid[0], ys - centroid[1])
        values = values * _radial_cutoff_arrays(rr, r_dom)
        kernel = np.exp(-lam * (t0 + ts))
        total += complex(np.sum(values * kernel * np.tile(_RES_WEIGHTS, panels) * half))

    if run.termination is Termination.GRAZING_HIT:
        return ResolventValue(total, -run.elapsed, grazing_truncated=True)
    if run.termination is Termination.BOUNCE_LIMIT:
        return ResolventValue(total, -math.inf, bounce_truncated=True)
    return ResolventValue(total, -run.elapsed)


def resolvent_identity_defects(
    obstacles: ObstacleSet,
    lam: complex,
    weight: Weight,
    n_states: int = 100,
    seed: int = 0,
    r_dom: Optional[float] = None,
    dt: float = 0.25,
    fd_step: float = 1e-5,
) -> np.ndarray:
    """|(P + lambda) R(lambda) f - f| at random interior states.

    P is realized as the central finite difference of t -> R(lambda)f along
    the forward flow.  States are sampled in the region where the cutoff
    equals one, so the right-hand side is the bare weight value.
    """
    r_dom = r_dom if r_dom is not None else obstacles.default_domain_radius()
    states = sample_states(obstacles, n_states, seed, radius=0.75 * r_dom)
    defects = np.empty(n_states)
    for idx, state in enumerate(states):
        center = resolvent_apply(obstacles, lam, weight, state, r_dom, dt).value
        fwd = advance(obstacles, state, Time(fd_step)).final
        bwd_state = advance(obstacles, state.reversed(), Time(fd_step)).final
        bwd = PhaseState(bwd_state.x, -bwd_state.v)
        r_plus = resolvent_apply(obstacles, lam, weight, fwd, r_dom, dt).value
        r_minus = resolvent_apply(obstacles, lam, weight, bwd, r_dom, dt).value
        generator = (r_plus - r_minus) / (2.0 * fd_step)
        defects[idx] = abs(generator + lam * center - weight(state))
    return defects


def sample_states(obstacles: ObstacleSet, n: int, seed: int,
                  radius: Optional[float] = None,
                  margin: float = 0.05) -> list[PhaseState]:
    """Uniform states in (ball minus obstacles) x S^1, rejection sampled."""
    rng = np.random.default_rng(seed)
    radius = radius if radius is not None else obstacles.default_domain_radius()
    centroid = obstacles.centroid
    states = []
    while len(states) < n:
        r = radius * math.sqrt(float(rng.uniform()))
        ang = float(rng.uniform(0.0, 2.0 * math.pi))
        point = centroid + r * np.array([math.cos(ang), math.sin(ang)])
        if any(float(np.linalg.norm(point - d.center)) < d.radius * (1.0 + margin)
               for d in obstacles.discs):
            continue
        phi = float(rng.uniform(0.0, 2.0 * math.pi))
        states.append(PhaseState(point, np.array([math.cos(phi), math.sin(phi)])))
    return states


def resolvent_matrix_coeff(
    obstacles: ObstacleSet,
    lam: complex,
    f: Weight,
    g: Weight,
    r_dom: Optional[float] = None,
    n_samples: int = 1000,
    seed: int = 0,
    dt: float = 0.25,
) -> tuple[complex, float]:
    """Monte-Carlo estimate of <R(lambda) f, g> over the ball times S^1.

    Returns (estimate, standard error); both test functions carry the
    standardized cutoff.  Warns below the convergence heuristic when the
    backward integrals may be truncated.
    """
    r_dom = r_dom if r_dom is not None else obstacles.default_domain_radius()
    centroid = obstacles.centroid
    states = sample_states(obstacles, n_samples, seed, radius=r_dom, margin=1e-9)
    values = np.empty(n_samples, dtype=complex)
    for i, state in enumerate(states):
        rf = resolvent_apply(obstacles, lam, f, state, r_dom, dt).value
        g_val = g(state) * radial_cutoff(float(np.linalg.norm(state.x - centroid)), r_dom)
        values[i] = rf * np.conj(g_val)
    area = math.pi * r_dom ** 2 - sum(math.pi * d.radius ** 2 for d in obstacles.discs)
    volume = area * 2.0 * math.pi
    estimate = volume * complex(np.mean(values))
    spread = float(np.sqrt((np.var(values.real) + np.var(values.imag)) / n_samples))
    return estimate, volume * spread
