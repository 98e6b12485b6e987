"""The non-grazing billiard flow.

Free straight-line flight at unit speed plus specular reflection at disc
boundaries.  A tangential (grazing) hit terminates the trajectory; escape
is detected against a ball of radius r_dom around the obstacle centroid.
Boundary states are stored post-reflection (outgoing side).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .errors import InvalidStateError
from .geometry import GRAZING_TOL, Hit, ObstacleSet, Ray, boundary_point, first_hit

DEFAULT_MAX_BOUNCES = 10_000


@dataclass(frozen=True)
class PhaseState:
    """A point of phase space: position x and unit velocity v."""

    x: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float))
        n = float(np.linalg.norm(self.v))
        if abs(n - 1.0) > 1e-12:
            raise InvalidStateError(f"velocity must be unit length (|v| = {n})")

    def reversed(self) -> "PhaseState":
        return PhaseState(self.x, -self.v)

    @staticmethod
    def of(x, v) -> "PhaseState":
        """Construct with the velocity normalized to unit length."""
        v = np.asarray(v, dtype=float)
        return PhaseState(np.asarray(x, dtype=float), v / float(np.linalg.norm(v)))


@dataclass(frozen=True)
class Collision:
    time: float            # cumulative flight time at the bounce
    obstacle: int          # 0-based index
    point: np.ndarray
    incoming_v: np.ndarray
    outgoing_v: np.ndarray
    cos_incidence: float


class Termination(enum.Enum):
    TIME_REACHED = "TimeReached"
    ESCAPED = "Escaped"
    GRAZING_HIT = "GrazingHit"
    BOUNCE_LIMIT = "BounceLimit"


@dataclass(frozen=True)
class FlowResult:
    final: PhaseState
    elapsed: float
    collisions: tuple[Collision, ...]
    termination: Termination


@dataclass(frozen=True)
class Time:
    value: float


@dataclass(frozen=True)
class Bounces:
    value: int


@dataclass(frozen=True)
class EscapeRadius:
    value: float


Horizon = Union[Time, Bounces, EscapeRadius]


def reflect(v: np.ndarray, inward_normal: np.ndarray) -> np.ndarray:
    """Specular reflection v - 2 (v.n) n; involutive, speed preserving."""
    return v - 2.0 * float(v @ inward_normal) * inward_normal


def _escape_event_time(x: np.ndarray, v: np.ndarray, center: np.ndarray, radius: float) -> float:
    """First t >= 0 at which the leg is outside the ball moving radially outward.

    Along a straight leg this is the outward sphere crossing from inside, 0
    if already outside and receding, or the turning point / re-exit time
    when starting outside moving inward.
    """
    m = x - center
    beta = float(v @ m)
    gamma = float(m @ m) - radius * radius
    disc = beta * beta - gamma
    if gamma > 0:
        if beta >= 0:
            return 0.0
        if disc <= 0:
            return -beta  # closest approach stays outside; outward from there
        return -beta + math.sqrt(disc)  # passes through the ball, exits later
    return -beta + math.sqrt(max(disc, 0.0))


def advance(
    obstacles: ObstacleSet,
    state: PhaseState,
    until: Horizon,
    grazing_tol: float = GRAZING_TOL,
    r_dom: Optional[float] = None,
    max_bounces: int = DEFAULT_MAX_BOUNCES,
) -> FlowResult:
    """Evolve a state: alternate free flights and reflections.

    Stops at the requested horizon, on escape from the ball of radius
    r_dom (default: the horizon radius, else the set's standard domain),
    or immediately on a grazing-classified hit, in which case the final
    state carries the incoming velocity at the tangency point.
    """
    if isinstance(until, EscapeRadius):
        r_esc = until.value
    else:
        r_esc = r_dom if r_dom is not None else obstacles.default_domain_radius()
    centroid = obstacles.centroid

    target_time = until.value if isinstance(until, Time) else math.inf
    target_bounces = until.value if isinstance(until, Bounces) else max_bounces
    target_bounces = min(target_bounces, max_bounces)

    x, v = state.x, state.v
    t = 0.0
    collisions: list[Collision] = []
    while True:
        hit = first_hit(obstacles, Ray(x, v))
        t_hit = hit.time if hit is not None else math.inf
        t_exit = _escape_event_time(x, v, centroid, r_esc)
        t_remain = target_time - t

        # ties go to the collision: a horizon landing on a bounce (up to
        # rounding) reports the post-reflection state
        tie = 1e-12 * (1.0 + abs(t))
        if t_remain < min(t_hit - tie, t_exit):
            final = PhaseState(x + t_remain * v, v)
            return FlowResult(final, target_time, tuple(collisions), Termination.TIME_REACHED)
        if t_exit < t_hit:
            final = PhaseState(x + t_exit * v, v)
            return FlowResult(final, t + t_exit, tuple(collisions), Termination.ESCAPED)

        assert hit is not None
        if hit.cos_incidence < grazing_tol:
            final = PhaseState(hit.point, v)
            return FlowResult(final, t + hit.time, tuple(collisions), Termination.GRAZING_HIT)

        v_out = reflect(v, hit.inward_normal)
        t += hit.time
        collisions.append(Collision(t, hit.obstacle, hit.point, v, v_out, hit.cos_incidence))
        x, v = hit.point, v_out
        if len(collisions) >= target_bounces:
            return FlowResult(PhaseState(x, v), t, tuple(collisions), Termination.BOUNCE_LIMIT)


# --- escape times -------------------------------------------------------------

@dataclass(frozen=True)
class EscapeOutcome:
    """Signed escape time, or the reason none exists.

    kind is "finite" (tau set), "trapped" (bounce budget exhausted inside
    the domain) or "grazing" (the trajectory ceased at a tangency).
    """

    kind: str
    tau: Optional[float] = None


def escape_time(
    obstacles: ObstacleSet,
    state: PhaseState,
    r_dom: float,
    sign: int = +1,
    max_bounces: int = DEFAULT_MAX_BOUNCES,
    grazing_tol: float = GRAZING_TOL,
) -> EscapeOutcome:
    """Forward (sign +1) or backward (sign -1) escape time from the ball.

    The backward time is computed by advancing the reversed state and
    negating, so tau- of (x, v) equals -tau+ of (x, -v).
    """
    if float(np.linalg.norm(state.x - obstacles.centroid)) > r_dom:
        raise InvalidStateError("state lies outside the escape domain")
    probe = state if sign > 0 else state.reversed()
    res = advance(obstacles, probe, EscapeRadius(r_dom),
                  grazing_tol=grazing_tol, max_bounces=max_bounces)
    if res.termination is Termination.ESCAPED:
        return EscapeOutcome("finite", math.copysign(res.elapsed, sign))
    if res.termination is Termination.GRAZING_HIT:
        return EscapeOutcome("grazing", math.copysign(res.elapsed, sign))
    return EscapeOutcome("trapped")


# --- Birkhoff boundary coordinates --------------------------------------------

@dataclass(frozen=True)
class BirkhoffCoord:
    """Post-reflection boundary coordinates (obstacle, arclength s, p).

    p is the tangential velocity component of the outgoing state: the sine
    of the angle to the inward normal, signed by the tangent direction;
    |p| < 1 away from grazing.
    """

    obstacle: int
    s: float
    p: float


def birkhoff_state(obstacles: ObstacleSet, bc: BirkhoffCoord) -> PhaseState:
    """Reconstruct the outgoing phase state at a Birkhoff coordinate."""
    if not abs(bc.p) < 1.0:
        raise InvalidStateError(f"|p| must be < 1, got {bc.p}")
    point, inward, tangent = boundary_point(obstacles.discs[bc.obstacle], bc.s)
    v = bc.p * tangent - math.sqrt(1.0 - bc.p * bc.p) * inward
    return PhaseState(point, v)


def birkhoff_coord(obstacles: ObstacleSet, obstacle: int, point: np.ndarray,
                   v_out: np.ndarray) -> BirkhoffCoord:
    disc = obstacles.discs[obstacle]
    rel = point - disc.center
    theta = math.atan2(rel[1], rel[0]) % (2.0 * math.pi)
    tangent = np.array([-math.sin(theta), math.cos(theta)])
    return BirkhoffCoord(obstacle, theta * disc.radius, float(v_out @ tangent))


def boundary_map(obstacles: ObstacleSet, bc: BirkhoffCoord,
                 grazing_tol: float = GRAZING_TOL) -> Optional[BirkhoffCoord]:
    """One forward bounce of the first-return boundary map.

    None if the trajectory escapes to infinity or the next hit is grazing.
    """
    state = birkhoff_state(obstacles, bc)
    hit = first_hit(obstacles, Ray(state.x, state.v))
    if hit is None or hit.cos_incidence < grazing_tol:
        return None
    v_out = reflect(state.v, hit.inward_normal)
    return birkhoff_coord(obstacles, hit.obstacle, hit.point, v_out)


def boundary_map_backward(obstacles: ObstacleSet, bc: BirkhoffCoord,
                          grazing_tol: float = GRAZING_TOL) -> Optional[BirkhoffCoord]:
    """One backward bounce: the previous outgoing boundary state.

    The incoming velocity at the current bounce is recovered by reflecting
    the outgoing one (reflection is involutive), and the previous bounce
    point is the first hit backwards along that leg.
    """
    state = birkhoff_state(obstacles, bc)
    point, inward, _ = boundary_point(obstacles.discs[bc.obstacle], bc.s)
    v_in = reflect(state.v, inward)
    hit = first_hit(obstacles, Ray(point, -v_in))
    if hit is None or hit.cos_incidence < grazing_tol:
        return None
    return birkhoff_coord(obstacles, hit.obstacle, hit.point, v_in)


# --- trapped-set approximation ------------------------------------------------

@dataclass(frozen=True)
class TrappedGrid:
    """Boolean survival masks over a Birkhoff grid, shape (N, n_s, n_p).

    gamma_plus marks cells whose backward iteration never escapes within
    n_bounce steps, gamma_minus the forward analogue, trapped their
    intersection.  s cell centers sit at i * (circumference / n_s) so that
    symmetric periodic points are representable exactly; p cell centers at
    -1 + (j + 1/2) * (2 / n_p).
    """

    domain_radius: float
    n_s: int
    n_p: int
    n_bounce: int
    gamma_plus: np.ndarray
    gamma_minus: np.ndarray
    trapped: np.ndarray

    def cell_center(self, obstacles: ObstacleSet, i: int, si: int, pj: int) -> BirkhoffCoord:
        circumference = 2.0 * math.pi * obstacles.discs[i].radius
        s = si * circumference / self.n_s
        p = -1.0 + (pj + 0.5) * 2.0 / self.n_p
        return BirkhoffCoord(i, s, p)


def trapped_set_grid(
    obstacles: ObstacleSet,
    r_dom: Optional[float] = None,
    n_s: int = 40,
    n_p: int = 25,
    n_bounce: int = 12,
    grazing_tol: float = GRAZING_TOL,
) -> TrappedGrid:
    """Mark grid cells surviving n_bounce boundary-map steps each way."""
    n_obs = len(obstacles)
    r_dom = r_dom if r_dom is not None else obstacles.default_domain_radius()
    gp = np.zeros((n_obs, n_s, n_p), dtype=bool)
    gm = np.zeros((n_obs, n_s, n_p), dtype=bool)

    def survives(bc: BirkhoffCoord, step) -> bool:
        cur = bc
        for _ in range(n_bounce):
            cur = step(obstacles, cur, grazing_tol)
            if cur is None:
                return False
        return True

    for i in range(n_obs):
        circumference = 2.0 * math.pi * obstacles.discs[i].radius
        for si in range(n_s):
            s = si * circumference / n_s
            for pj in range(n_p):
                p = -1.0 + (pj + 0.5) * 2.0 / n_p
                bc = BirkhoffCoord(i, s, p)
                gm[i, si, pj] = survives(bc, boundary_map)
                gp[i, si, pj] = survives(bc, boundary_map_backward)
    return TrappedGrid(r_dom, n_s, n_p, n_bounce, gp, gm, gp & gm)


# --- contact-form reflection invariant ----------------------------------------

def contact_reflection_check(obstacles: ObstacleSet, samples: int, seed: int = 0) -> float:
    """Max defect of the tangential-component identity under reflection.

    For boundary points x, unit velocities v and tangent vectors u of the
    obstacle boundary, reflection leaves v . u unchanged (the coordinate
    form of the invariance of the canonical contact form restricted to the
    boundary, since the base projection kills the normal component).
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(samples):
        i = int(rng.integers(len(obstacles)))
        disc = obstacles.discs[i]
        s = float(rng.uniform(0.0, 2.0 * math.pi * disc.radius))
        _, inward, tangent = boundary_point(disc, s)
        phi = float(rng.uniform(0.0, 2.0 * math.pi))
        v = np.array([math.cos(phi), math.sin(phi)])
        v_ref = reflect(v, inward)
        u = float(rng.uniform(0.2, 2.0)) * float(rng.choice([-1.0, 1.0])) * tangent
        worst = max(worst, abs(float(v @ u) - float(v_ref @ u)))
    return worst
