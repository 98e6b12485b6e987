"""Sampling-based oracles shared by the unit and acceptance suites."""

import math

import numpy as np


def mc_hull_violation(obstacles, samples=1500, t_grid=501, seed=0):
    """Does any third disc meet the convex hull of a pair, by point sampling.

    Membership is tested against a dense grid of interpolated discs along
    each pair, an independent path from the closed-form critical-point
    distance used by the production check.
    """
    rng = np.random.default_rng(seed)
    ts = np.linspace(0.0, 1.0, t_grid)
    n = len(obstacles)
    for i in range(n):
        for j in range(i + 1, n):
            a, b = obstacles.discs[i], obstacles.discs[j]
            cs = (1 - ts)[:, None] * a.center + ts[:, None] * b.center
            rs = (1 - ts) * a.radius + ts * b.radius
            for k in range(n):
                if k in (i, j):
                    continue
                d = obstacles.discs[k]
                angles = rng.uniform(0, 2 * math.pi, samples)
                radii = d.radius * np.sqrt(rng.uniform(0, 1, samples))
                interior = d.center + np.stack([radii * np.cos(angles),
                                                radii * np.sin(angles)], axis=1)
                boundary = d.center + d.radius * np.stack(
                    [np.cos(angles), np.sin(angles)], axis=1)
                pts = np.concatenate([interior, boundary])
                dist = np.linalg.norm(pts[:, None, :] - cs[None, :, :], axis=2) \
                    - rs[None, :]
                if np.any(dist.min(axis=1) <= 0):
                    return True
    return False


def random_admissible_sets(count, seed):
    """Random disjoint disc configurations (2 to 4 obstacles)."""
    from ndisk.geometry import Disc, ObstacleSet

    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        n = int(rng.integers(2, 5))
        discs = tuple(
            Disc(np.array([rng.uniform(-6, 6), rng.uniform(-6, 6)]),
                 rng.uniform(0.3, 1.4))
            for _ in range(n)
        )
        try:
            out.append(ObstacleSet(discs))
        except ValueError:
            continue
    return out


def mobius_prime_cycle_count(n_symbols: int, length: int) -> int:
    """(1/n) sum_{d|n} mu(n/d) tr(A^d) with A the no-repeat adjacency matrix."""
    a = np.ones((n_symbols, n_symbols)) - np.eye(n_symbols)

    def mu(m):
        out, p = 1, 2
        while p * p <= m:
            if m % p == 0:
                m //= p
                if m % p == 0:
                    return 0
                out = -out
            p += 1
        return -out if m > 1 else out

    total = 0
    for d in range(1, length + 1):
        if length % d == 0:
            total += mu(length // d) * int(round(np.trace(np.linalg.matrix_power(a, d))))
    return total // length
