"""Periodic orbits: symbolic enumeration, Newton search, verification, storage.

Periodic billiard trajectories are critical points of the cyclic length
functional L(theta_1..theta_n) = sum_k |q_{k+1} - q_k| over boundary angles
of the itinerary discs.  The gradient is analytic; the Hessian is taken by
finite differences.  Every found orbit is re-verified from scratch before
it is admitted to a database.
"""

from __future__ import annotations

import datetime
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import (
    GrazingOrbitError,
    NewtonDivergedError,
    OccludedLegError,
)
from .flow import PhaseState, reflect
from .geometry import GRAZING_TOL, ObstacleSet, Ray, first_hit
from .tangent import HyperbolicData, cycle_monodromy, hyperbolic_data

DB_SCHEMA = "ndisk-orbit-db-1"


# --- itineraries ---------------------------------------------------------------

@dataclass(frozen=True)
class Itinerary:
    """A cyclic bounce sequence in canonical (lexicographically minimal) rotation.

    Symbols are 0-based obstacle indices; labels render 1-based.  No two
    cyclically adjacent symbols are equal and the word is primitive (not a
    power of a shorter word).
    """

    symbols: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "symbols", tuple(int(s) for s in self.symbols))
        n = len(self.symbols)
        if n < 2:
            raise ValueError("itinerary needs at least two symbols")
        for i in range(n):
            if self.symbols[i] == self.symbols[(i + 1) % n]:
                raise ValueError(f"adjacent repeat at position {i} in {self.symbols}")
        if self.symbols != min(self._rotations()):
            raise ValueError("itinerary must be in minimal rotation; use Itinerary.canonical")
        if not self._is_primitive():
            raise ValueError(f"itinerary {self.symbols} is a power of a shorter word")

    def _rotations(self) -> list[tuple[int, ...]]:
        s = self.symbols
        return [s[i:] + s[:i] for i in range(len(s))]

    def _is_primitive(self) -> bool:
        s = self.symbols
        n = len(s)
        return not any(n % d == 0 and s == s[:d] * (n // d) for d in range(1, n))

    @classmethod
    def canonical(cls, symbols) -> "Itinerary":
        s = tuple(int(x) for x in symbols)
        rots = [s[i:] + s[:i] for i in range(len(s))]
        return cls(min(rots))

    def __len__(self) -> int:
        return len(self.symbols)

    @property
    def label(self) -> str:
        """1-based rendering, e.g. (0, 1) -> "12"; dashed beyond 9 obstacles."""
        if all(s < 9 for s in self.symbols):
            return "".join(str(s + 1) for s in self.symbols)
        return "-".join(str(s + 1) for s in self.symbols)

    @classmethod
    def from_label(cls, label: str) -> "Itinerary":
        parts = label.split("-") if "-" in label else list(label)
        return cls.canonical(int(p) - 1 for p in parts)


def enumerate_itineraries(n_obstacles: int, max_len: int) -> list[Itinerary]:
    """All primitive canonical itineraries of lengths 2..max_len."""
    if n_obstacles < 2:
        return []
    out: list[Itinerary] = []
    for n in range(2, max_len + 1):
        out.extend(_necklaces(n_obstacles, n))
    return out


def _necklaces(n_symbols: int, length: int) -> Iterator[Itinerary]:
    # DFS over words with no adjacent repeats, starting at the minimal symbol
    # (a cheap prefilter: the canonical rotation starts with the word minimum).
    def rec(prefix: tuple[int, ...]) -> Iterator[tuple[int, ...]]:
        if len(prefix) == length:
            if prefix[-1] != prefix[0]:
                yield prefix
            return
        for s in range(n_symbols):
            if s != prefix[-1]:
                yield from rec(prefix + (s,))

    for first in range(n_symbols):
        for word in rec((first,)):
            if min(word) != first:
                continue
            rots = [word[i:] + word[:i] for i in range(length)]
            if word != min(rots):
                continue
            if any(length % d == 0 and word == word[:d] * (length // d)
                   for d in range(1, length)):
                continue
            yield Itinerary(word)


# --- periodic orbits -----------------------------------------------------------

@dataclass(frozen=True)
class PeriodicOrbit:
    """A verified closed non-grazing trajectory.

    thetas are the boundary angles per bounce, points/states the bounce
    geometry (states post-reflection), T_prim the primitive period (equal
    to the total length at unit speed).
    """

    itinerary: Itinerary
    thetas: np.ndarray
    points: np.ndarray
    states: tuple[PhaseState, ...]
    leg_lengths: np.ndarray
    cos_incidences: np.ndarray
    T_prim: float
    monodromy: np.ndarray
    hyp: HyperbolicData
    newton_residual: float


@dataclass(frozen=True)
class NewtonOptions:
    tol: float = 1e-12
    max_iter: int = 100
    hessian_step: float = 1e-6
    grazing_tol: float = GRAZING_TOL
    sweep_halfwidth: float = 1.2


def _cycle_points(obstacles: ObstacleSet, itinerary: Itinerary, thetas: np.ndarray) -> np.ndarray:
    centers = np.array([obstacles.discs[s].center for s in itinerary.symbols])
    radii = np.array([obstacles.discs[s].radius for s in itinerary.symbols])
    return centers + radii[:, None] * np.stack([np.cos(thetas), np.sin(thetas)], axis=1)


def _cycle_length(obstacles: ObstacleSet, itinerary: Itinerary, thetas: np.ndarray) -> float:
    q = _cycle_points(obstacles, itinerary, thetas)
    return float(sum(np.linalg.norm(q[(k + 1) % len(q)] - q[k]) for k in range(len(q))))


def _length_gradient(obstacles: ObstacleSet, itinerary: Itinerary, thetas: np.ndarray) -> np.ndarray:
    q = _cycle_points(obstacles, itinerary, thetas)
    radii = np.array([obstacles.discs[s].radius for s in itinerary.symbols])
    n = len(q)
    grad = np.empty(n)
    for k in range(n):
        u_in = q[k] - q[k - 1]
        u_in /= np.linalg.norm(u_in)
        u_out = q[(k + 1) % n] - q[k]
        u_out /= np.linalg.norm(u_out)
        tangent = np.array([-math.sin(thetas[k]), math.cos(thetas[k])])
        grad[k] = radii[k] * float(tangent @ (u_in - u_out))
    return grad


def find_orbit(
    obstacles: ObstacleSet,
    itinerary: Itinerary,
    opts: NewtonOptions = NewtonOptions(),
) -> PeriodicOrbit:
    """Locate the periodic orbit with the given itinerary by damped Newton.

    Seeds each bounce angle towards the next obstacle's center, runs one
    coordinate-descent sweep, then Newton on the length gradient with a
    finite-difference Hessian.  Raises NewtonDivergedError, OccludedLegError
    or GrazingOrbitError.
    """
    n = len(itinerary)
    centers = np.array([obstacles.discs[s].center for s in itinerary.symbols])
    thetas = np.empty(n)
    for k in range(n):
        to_next = centers[(k + 1) % n] - centers[k]
        thetas[k] = math.atan2(to_next[1], to_next[0])

    # one coordinate-descent sweep to pull the seed into the Newton basin
    for k in range(n):
        def length_at(t: float, k=k) -> float:
            trial = thetas.copy()
            trial[k] = t
            return _cycle_length(obstacles, itinerary, trial)

        res = minimize_scalar(length_at,
                              bounds=(thetas[k] - opts.sweep_halfwidth,
                                      thetas[k] + opts.sweep_halfwidth),
                              method="bounded")
        thetas[k] = float(res.x)

    grad = _length_gradient(obstacles, itinerary, thetas)
    h = opts.hessian_step
    for _ in range(opts.max_iter):
        res_norm = float(np.max(np.abs(grad)))
        if res_norm < opts.tol:
            break
        hess = np.empty((n, n))
        for k in range(n):
            bump = np.zeros(n)
            bump[k] = h
            hess[:, k] = (_length_gradient(obstacles, itinerary, thetas + bump)
                          - _length_gradient(obstacles, itinerary, thetas - bump)) / (2 * h)
        try:
            step = np.linalg.solve(hess, -grad)
        except np.linalg.LinAlgError as exc:
            raise NewtonDivergedError(f"singular Hessian for {itinerary.label}") from exc
        alpha = 1.0
        while alpha > 1e-14:
            trial = thetas + alpha * step
            trial_grad = _length_gradient(obstacles, itinerary, trial)
            if float(np.max(np.abs(trial_grad))) < res_norm:
                thetas, grad = trial, trial_grad
                break
            alpha *= 0.5
        else:
            raise NewtonDivergedError(f"no descent step for {itinerary.label}")
    else:
        raise NewtonDivergedError(
            f"{itinerary.label}: residual {float(np.max(np.abs(grad))):.3e} "
            f"after {opts.max_iter} iterations"
        )

    return assemble_orbit(obstacles, itinerary, thetas,
                          newton_residual=float(np.max(np.abs(grad))), opts=opts)


def assemble_orbit(
    obstacles: ObstacleSet,
    itinerary: Itinerary,
    thetas: np.ndarray,
    newton_residual: float = math.nan,
    opts: NewtonOptions = NewtonOptions(),
) -> PeriodicOrbit:
    """Build the full orbit record from converged bounce angles.

    Checks every free leg for occlusion by other obstacles and every bounce
    for a grazing margin before computing the linearization.
    """
    thetas = np.asarray(thetas, dtype=float)
    n = len(itinerary)
    q = _cycle_points(obstacles, itinerary, thetas)
    leg_lengths = np.empty(n)
    cos_incidences = np.empty(n)
    states = []
    for k in range(n):
        nxt = (k + 1) % n
        leg = q[nxt] - q[k]
        leg_len = float(np.linalg.norm(leg))
        direction = leg / leg_len
        leg_lengths[k] = leg_len
        hit = first_hit(obstacles, Ray(q[k], direction))
        if hit is None or hit.obstacle != itinerary.symbols[nxt] or hit.time < leg_len - 1e-9:
            found = "nothing" if hit is None else f"obstacle {hit.obstacle + 1} at t={hit.time:.6g}"
            raise OccludedLegError(
                f"{itinerary.label}: leg {k}->{nxt} expected obstacle "
                f"{itinerary.symbols[nxt] + 1} at t={leg_len:.6g}, hit {found}"
            )
        cos_incidences[nxt] = hit.cos_incidence
        if hit.cos_incidence < opts.grazing_tol:
            raise GrazingOrbitError(
                f"{itinerary.label}: bounce {nxt} has cos(incidence) {hit.cos_incidence:.3e}"
            )
    for k in range(n):
        states.append(PhaseState(q[k], (q[(k + 1) % n] - q[k]) / leg_lengths[k]))

    period = float(np.sum(leg_lengths))
    m = cycle_monodromy(obstacles, itinerary.symbols, leg_lengths, cos_incidences)
    return PeriodicOrbit(
        itinerary=itinerary,
        thetas=thetas,
        points=q,
        states=tuple(states),
        leg_lengths=leg_lengths,
        cos_incidences=cos_incidences,
        T_prim=period,
        monodromy=m,
        hyp=hyperbolic_data(m, period),
        newton_residual=newton_residual,
    )


# --- verification --------------------------------------------------------------

@dataclass(frozen=True)
class OrbitReport:
    """From-scratch re-check of a stored orbit; the database admission gate."""

    specular_defect: float
    occlusion_ok: bool
    grazing_margin: float
    period_defect: float

    def ok(self, tol: float = 1e-10, grazing_tol: float = GRAZING_TOL) -> bool:
        return (self.specular_defect < tol and self.occlusion_ok
                and self.grazing_margin >= grazing_tol and self.period_defect < tol)


def verify_orbit(obstacles: ObstacleSet, orbit: PeriodicOrbit) -> OrbitReport:
    if max(orbit.itinerary.symbols) >= len(obstacles):
        # orbit indexes obstacles this set does not have
        return OrbitReport(specular_defect=math.inf, occlusion_ok=False,
                           grazing_margin=-math.inf, period_defect=math.inf)
    n = len(orbit.itinerary)
    q = _cycle_points(obstacles, orbit.itinerary, orbit.thetas)
    specular = 0.0
    grazing_margin = math.inf
    occlusion_ok = True
    total = 0.0
    for k in range(n):
        nxt = (k + 1) % n
        leg = q[nxt] - q[k]
        leg_len = float(np.linalg.norm(leg))
        total += leg_len
        u_out = leg / leg_len
        u_in = (q[k] - q[k - 1]) / float(np.linalg.norm(q[k] - q[k - 1]))
        disc = obstacles.discs[orbit.itinerary.symbols[k]]
        inward = (disc.center - q[k]) / float(np.linalg.norm(disc.center - q[k]))
        specular = max(specular, float(np.max(np.abs(reflect(u_in, inward) - u_out))))
        grazing_margin = min(grazing_margin, float(u_in @ inward))
        hit = first_hit(obstacles, Ray(q[k], u_out))
        if hit is None or hit.obstacle != orbit.itinerary.symbols[nxt] or abs(hit.time - leg_len) > 1e-9:
            occlusion_ok = False
    return OrbitReport(
        specular_defect=specular,
        occlusion_ok=occlusion_ok,
        grazing_margin=grazing_margin,
        period_defect=abs(total - orbit.T_prim),
    )


# --- database ------------------------------------------------------------------

@dataclass
class OrbitDb:
    """Verified orbits keyed by itinerary label, tied to one obstacle set."""

    set_hash: str
    max_len: int
    newton_tol: float
    grazing_tol: float
    entries: dict[str, PeriodicOrbit] = field(default_factory=dict)
    pruned: dict[str, str] = field(default_factory=dict)   # label -> reason
    failed: dict[str, str] = field(default_factory=dict)   # label -> message
    created_at: str = ""

    def orbits(self) -> list[PeriodicOrbit]:
        return list(self.entries.values())

    def counts_by_length(self) -> dict[int, dict[str, int]]:
        out: dict[int, dict[str, int]] = {}
        for label, orbit in self.entries.items():
            out.setdefault(len(orbit.itinerary), {"found": 0, "pruned": 0, "failed": 0})["found"] += 1
        for table, kind in ((self.pruned, "pruned"), (self.failed, "failed")):
            for label in table:
                n = len(Itinerary.from_label(label))
                out.setdefault(n, {"found": 0, "pruned": 0, "failed": 0})[kind] += 1
        return dict(sorted(out.items()))

    def save(self, path: str) -> None:
        header = {
            "schema": DB_SCHEMA,
            "set_hash": self.set_hash,
            "max_len": self.max_len,
            "newton_tol": self.newton_tol,
            "grazing_tol": self.grazing_tol,
            "created_at": self.created_at,
            "pruned": self.pruned,
            "failed": self.failed,
        }
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            for label in sorted(self.entries):
                orbit = self.entries[label]
                row = {
                    "itinerary": label,
                    "thetas": [float(t) for t in orbit.thetas],
                    "T_prim": orbit.T_prim,
                    "trace": orbit.hyp.trace,
                    "Lambda": orbit.hyp.Lambda,
                    "residual": orbit.newton_residual,
                    "set_hash": self.set_hash,
                }
                fh.write(json.dumps(row, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str, obstacles: ObstacleSet) -> "OrbitDb":
        """Rebuild a database; refuses files whose hash does not match the set."""
        with open(path, "r", encoding="utf-8") as fh:
            lines = [line for line in fh.read().splitlines() if line.strip()]
        if not lines:
            raise ValueError(f"{path}: empty orbit database")
        header = json.loads(lines[0])
        if header.get("schema") != DB_SCHEMA:
            raise ValueError(f"{path}: unknown schema {header.get('schema')!r}")
        want = obstacles.config_hash()
        if header["set_hash"] != want:
            raise ValueError(
                f"{path}: stale database (set hash {header['set_hash']} != {want})"
            )
        db = cls(set_hash=want, max_len=header["max_len"],
                 newton_tol=header["newton_tol"], grazing_tol=header["grazing_tol"],
                 pruned=dict(header.get("pruned", {})), failed=dict(header.get("failed", {})),
                 created_at=header.get("created_at", ""))
        for line in lines[1:]:
            row = json.loads(line)
            if row["set_hash"] != want:
                raise ValueError(f"{path}: entry {row['itinerary']} has a stale set hash")
            itinerary = Itinerary.from_label(row["itinerary"])
            orbit = assemble_orbit(obstacles, itinerary, np.array(row["thetas"]),
                                   newton_residual=row["residual"])
            report = verify_orbit(obstacles, orbit)
            if not report.ok():
                raise ValueError(f"{path}: entry {row['itinerary']} fails verification")
            db.entries[row["itinerary"]] = orbit
        return db


def build_db(
    obstacles: ObstacleSet,
    max_len: int,
    opts: NewtonOptions = NewtonOptions(),
) -> OrbitDb:
    """Enumerate, find, verify and collect all primitive orbits up to max_len.

    Pruned itineraries (occluded or grazing) are recorded, not fatal;
    genuine Newton failures land in .failed.
    """
    db = OrbitDb(
        set_hash=obstacles.config_hash(),
        max_len=max_len,
        newton_tol=opts.tol,
        grazing_tol=opts.grazing_tol,
        created_at=datetime.datetime.now(datetime.timezone.utc).isoformat(),
    )
    for itinerary in enumerate_itineraries(len(obstacles), max_len):
        try:
            orbit = find_orbit(obstacles, itinerary, opts)
        except (OccludedLegError, GrazingOrbitError) as exc:
            db.pruned[itinerary.label] = str(exc)
            continue
        except NewtonDivergedError as exc:
            db.failed[itinerary.label] = str(exc)
            continue
        report = verify_orbit(obstacles, orbit)
        if not report.ok(grazing_tol=opts.grazing_tol):
            db.failed[itinerary.label] = f"verification failed: {report}"
            continue
        db.entries[itinerary.label] = orbit
    return db
