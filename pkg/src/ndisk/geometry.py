"""Obstacle configurations and ray geometry.

Obstacles are closed round discs in the Euclidean plane.  This module owns
the disc/obstacle-set types, first-intersection ray casting with a grazing
classification, the no-eclipse admissibility test, and the boundary
parametrization used everywhere else.

Conventions: obstacle *indices* are 0-based throughout the Python API;
*labels* in reports and files are 1-based (label = index + 1, following the
order of the configuration file).
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidStateError

# Guard against re-detecting the launch point of a ray that starts on a
# boundary circle as its next hit.
T_EPS = 1e-12

# Default tolerance on cos(incidence) below which a hit counts as grazing.
GRAZING_TOL = 1e-9

_SPLIT = 134217729.0  # 2**27 + 1, Dekker splitting constant


def _two_product_err(a: float) -> tuple[float, float]:
    """a*a and its exact floating-point error term (Dekker split)."""
    p = a * a
    a1 = a * _SPLIT
    hi = a1 - (a1 - a)
    lo = a - hi
    err = ((hi * hi - p) + 2.0 * hi * lo) + lo * lo
    return p, err


def _discriminant(b: float, c: float) -> float:
    """b*b - c with a compensated square, stable near tangency."""
    p, e = _two_product_err(b)
    return (p - c) + e


@dataclass(frozen=True)
class Disc:
    """A closed disc obstacle: center and radius (curvature = 1/radius)."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if self.center.shape != (2,):
            raise ValueError("disc center must be a 2-vector")
        if not self.radius > 0:
            raise ValueError(f"disc radius must be positive, got {self.radius}")

    @property
    def curvature(self) -> float:
        return 1.0 / self.radius


@dataclass(frozen=True)
class ObstacleSet:
    """An ordered collection of pairwise disjoint disc obstacles."""

    discs: tuple[Disc, ...]

    def __post_init__(self):
        object.__setattr__(self, "discs", tuple(self.discs))
        if len(self.discs) < 1:
            raise ValueError("obstacle set needs at least one disc")
        for i in range(len(self.discs)):
            for j in range(i + 1, len(self.discs)):
                a, b = self.discs[i], self.discs[j]
                gap = float(np.linalg.norm(a.center - b.center)) - (a.radius + b.radius)
                if gap <= 0:
                    raise ValueError(
                        f"discs {i + 1} and {j + 1} are not strictly disjoint "
                        f"(gap {gap:.3g})"
                    )

    def __len__(self) -> int:
        return len(self.discs)

    @property
    def centroid(self) -> np.ndarray:
        return np.mean([d.center for d in self.discs], axis=0)

    def diameter(self) -> float:
        """Diameter of the union of the discs."""
        if len(self.discs) == 1:
            return 2.0 * self.discs[0].radius
        out = 0.0
        for i, a in enumerate(self.discs):
            for b in self.discs[i + 1:]:
                out = max(out, float(np.linalg.norm(a.center - b.center)) + a.radius + b.radius)
        return out

    def default_domain_radius(self) -> float:
        """Radius of the standard escape ball around the centroid."""
        c = self.centroid
        reach = max(float(np.linalg.norm(d.center - c)) + d.radius for d in self.discs)
        return reach + self.diameter()

    def config_hash(self) -> str:
        """Hash of the configuration, used to tie orbit databases to it."""
        payload = [[repr(float(d.center[0])), repr(float(d.center[1])), repr(float(d.radius))]
                   for d in self.discs]
        return hashlib.sha256(json.dumps(payload).encode()).hexdigest()[:16]

    def contains_interior(self, point: np.ndarray, margin: float = 1e-12) -> bool:
        """True if the point lies strictly inside some obstacle."""
        for d in self.discs:
            if float(np.linalg.norm(np.asarray(point, float) - d.center)) < d.radius * (1.0 - margin):
                return True
        return False


@dataclass(frozen=True)
class Ray:
    """Half-line origin + t*direction, t >= 0, with unit direction."""

    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float))
        object.__setattr__(self, "direction", np.asarray(self.direction, dtype=float))
        n = float(np.linalg.norm(self.direction))
        if abs(n - 1.0) > 1e-12:
            raise ValueError(f"ray direction must be unit length (|d| = {n})")


@dataclass(frozen=True)
class Hit:
    """First intersection of a ray with an obstacle boundary.

    cos_incidence is direction . inward_normal, in [0, 1]; zero means the
    ray meets the circle tangentially.
    """

    obstacle: int
    time: float
    point: np.ndarray
    inward_normal: np.ndarray
    cos_incidence: float


class HitKind(enum.Enum):
    TRANSVERSAL = "Transversal"
    GRAZING = "Grazing"


def classify_hit(hit: Hit, grazing_tol: float = GRAZING_TOL) -> HitKind:
    """Grazing iff cos(incidence) falls below the tolerance."""
    return HitKind.GRAZING if hit.cos_incidence < grazing_tol else HitKind.TRANSVERSAL


def first_hit(obstacles: ObstacleSet, ray: Ray, t_eps: float = T_EPS) -> Optional[Hit]:
    """First forward intersection of the ray with any obstacle, or None.

    The origin may lie on a boundary circle (the t=0 root is skipped); an
    origin strictly inside an obstacle raises InvalidStateError.
    """
    o, d = ray.origin, ray.direction
    best_t = math.inf
    best_i = -1
    for i, disc in enumerate(obstacles.discs):
        m = disc.center - o
        dist2 = float(m @ m)
        cc = dist2 - disc.radius * disc.radius
        if cc < -1e-10 * disc.radius * disc.radius:
            raise InvalidStateError(
                f"ray origin lies strictly inside obstacle {i + 1}"
            )
        b = float(d @ m)
        if b <= 0 and cc > 0:
            continue  # circle entirely behind the launch point
        disc_q = _discriminant(b, cc)
        if disc_q < 0:
            continue
        s = math.sqrt(disc_q)
        t = b - s
        if t <= t_eps:
            t = b + s  # origin on (or epsilon-inside) the circle
        if t_eps < t < best_t:
            best_t = t
            best_i = i
    if best_i < 0:
        return None
    disc = obstacles.discs[best_i]
    point = o + best_t * d
    normal = disc.center - point
    normal = normal / float(np.linalg.norm(normal))
    cos_inc = float(np.clip(d @ normal, 0.0, 1.0))
    return Hit(best_i, best_t, point, normal, cos_inc)


def boundary_point(disc: Disc, s: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Point, inward normal and tangent at arclength s on the disc boundary.

    s is taken mod the circumference; theta = s / radius.
    """
    theta = s / disc.radius
    c, sn = math.cos(theta), math.sin(theta)
    point = disc.center + disc.radius * np.array([c, sn])
    inward = np.array([-c, -sn])
    tangent = np.array([-sn, c])
    return point, inward, tangent


# --- no-eclipse admissibility ------------------------------------------------

@dataclass(frozen=True)
class NoEclipseReport:
    """Outcome of the pairwise-hull obstruction test.

    Violations are (i, j, k) triples of 1-based labels: obstacle k meets
    the convex hull of obstacles i and j.
    """

    holds: bool
    violations: tuple[tuple[int, int, int], ...] = field(default_factory=tuple)


def hull_signed_distance(a: Disc, b: Disc, point: np.ndarray) -> float:
    """Signed distance from a point to the convex hull of two discs.

    The hull is the union of the interpolated discs
    center (1-t) c_a + t c_b, radius (1-t) r_a + t r_b, t in [0, 1]; the
    minimized g(t) = |p - c(t)| - r(t) is convex in t, so evaluating at the
    clamped analytic critical point and the endpoints is exact.
    """
    p = np.asarray(point, dtype=float)
    dvec = b.center - a.center
    m = p - a.center
    dr = b.radius - a.radius
    dd = float(dvec @ dvec)
    dm = float(dvec @ m)

    def g(t: float) -> float:
        return float(np.linalg.norm(m - t * dvec)) - (a.radius + t * dr)

    candidates = [0.0, 1.0]
    # critical points of g: (t*dd - dm)/|m - t*dvec| = dr, squared -> quadratic
    qa = dd * dd - dr * dr * dd
    qb = -2.0 * dm * (dd - dr * dr)
    qc = dm * dm - dr * dr * float(m @ m)
    if abs(qa) > 0:
        disc_q = qb * qb - 4.0 * qa * qc
        if disc_q >= 0:
            rt = math.sqrt(disc_q)
            for t in ((-qb - rt) / (2 * qa), (-qb + rt) / (2 * qa)):
                if 0.0 < t < 1.0:
                    candidates.append(t)
    return min(g(t) for t in candidates)


def no_eclipse_check(obstacles: ObstacleSet) -> NoEclipseReport:
    """Check that no obstacle meets the convex hull of any other pair."""
    n = len(obstacles)
    violations = []
    for i in range(n):
        for j in range(i + 1, n):
            for k in range(n):
                if k in (i, j):
                    continue
                dk = obstacles.discs[k]
                dist = hull_signed_distance(obstacles.discs[i], obstacles.discs[j], dk.center) - dk.radius
                if dist <= 0:
                    violations.append((i + 1, j + 1, k + 1))
    return NoEclipseReport(holds=not violations, violations=tuple(violations))


# --- configuration files -----------------------------------------------------

def obstacles_from_dict(data: dict) -> ObstacleSet:
    """Build an ObstacleSet from {"discs": [{"center": [x, y], "radius": r}]}.

    The first violated invariant is reported in the raised ValueError.
    """
    if not isinstance(data, dict) or "discs" not in data:
        raise ValueError('obstacle configuration must be an object with a "discs" key')
    raw = data["discs"]
    if not isinstance(raw, list) or not raw:
        raise ValueError('"discs" must be a non-empty list')
    discs = []
    for idx, entry in enumerate(raw):
        try:
            center = entry["center"]
            radius = entry["radius"]
        except (TypeError, KeyError) as exc:
            raise ValueError(f"disc {idx + 1}: missing center/radius") from exc
        if not (isinstance(center, Sequence) and len(center) == 2):
            raise ValueError(f"disc {idx + 1}: center must be [x, y]")
        if not (isinstance(radius, (int, float)) and radius > 0):
            raise ValueError(f"disc {idx + 1}: radius must be a positive number")
        discs.append(Disc(np.array(center, dtype=float), float(radius)))
    return ObstacleSet(tuple(discs))


def load_obstacles(path: str) -> ObstacleSet:
    """Load and validate an obstacle configuration file."""
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    return obstacles_from_dict(data)
