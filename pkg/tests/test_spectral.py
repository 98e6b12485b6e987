import cmath
import math
import warnings

import numpy as np
import pytest

from ndisk.errors import EmptyDbError, NearbyResonanceError
from ndisk.flow import PhaseState
from ndisk.orbits import OrbitDb
from ndisk.spectral import (
    CycleExpansion,
    Region,
    ZetaConfig,
    convergence_abscissa,
    find_resonances,
    fredholm_det,
    radial_cutoff,
    residue,
    resolvent_apply,
    resolvent_identity_defects,
    resolvent_matrix_coeff,
    sample_states,
    zeta_quotient,
    zeta_weighted,
)
from ndisk.weights import Weight

from conftest import LAMBDA_2DISK, T_2DISK

LN_LAMBDA = math.log(LAMBDA_2DISK)


def analytic_zeta_one(lam, terms=60):
    """Independent oracle: the raw repetition series with exact cycle data."""
    total = 0j
    for k in range(1, terms + 1):
        det = LAMBDA_2DISK ** k * (1 - LAMBDA_2DISK ** (-k)) ** 2
        total += T_2DISK * cmath.exp(-lam * k * T_2DISK) / det
    return total


def analytic_det(lam, jmax=80):
    """Independent oracle: the per-family product form of the determinant."""
    x = cmath.exp(-lam * T_2DISK)
    out = 1.0 + 0.0j
    for j in range(jmax + 1):
        out *= (1 - x * LAMBDA_2DISK ** (-(j + 1))) ** (j + 1)
    return out


def lattice_points(region: Region):
    """Analytic zero lattice of the two-disk determinant inside a region."""
    points = {}
    j = 0
    while True:
        re = -(j + 1) * LN_LAMBDA / T_2DISK
        if re < region.re_min:
            break
        k = 0
        while True:
            im = 2 * math.pi * k / T_2DISK
            if im > max(abs(region.im_min), abs(region.im_max)):
                break
            for sign in ((1,) if k == 0 else (1, -1)):
                z = complex(re, sign * im)
                if region.contains(z):
                    points[z] = j + 1
            k += 1
        j += 1
    return points


@pytest.fixture(scope="module")
def cfg30():
    return ZetaConfig(max_len=30)


class TestZetaWeighted:
    def test_matches_analytic_series(self, two_disk_db, cfg30):
        value = zeta_weighted(1.0, Weight.one(), two_disk_db, cfg30)
        oracle = analytic_zeta_one(1.0)
        assert abs(value - oracle) <= 1e-14 * abs(oracle)

    def test_matches_at_complex_points(self, two_disk_db, cfg30):
        rng = np.random.default_rng(0)
        for _ in range(10):
            lam = complex(rng.uniform(0.2, 2.0), rng.uniform(-2, 2))
            value = zeta_weighted(lam, Weight.one(), two_disk_db, cfg30)
            oracle = analytic_zeta_one(lam)
            assert abs(value - oracle) <= 1e-13 * abs(oracle)

    def test_zero_weight(self, two_disk_db, cfg30):
        assert zeta_weighted(1.0, Weight.parse("0"), two_disk_db, cfg30) == 0.0

    def test_even_bounce_sign_character_is_trivial(self, two_disk_db, cfg30):
        plain = zeta_weighted(0.7, Weight.one(), two_disk_db, cfg30)
        signed = zeta_weighted(0.7, Weight.parse("1", reflection_factor=-1.0),
                               two_disk_db, cfg30)
        assert signed == pytest.approx(plain, rel=1e-14)

    def test_warns_below_abscissa(self, two_disk_db, cfg30):
        edge = convergence_abscissa(two_disk_db, cfg30)
        assert edge == pytest.approx(-LN_LAMBDA / T_2DISK, rel=1e-12)
        with pytest.warns(UserWarning):
            zeta_weighted(edge - 0.1, Weight.one(), two_disk_db, cfg30)

    def test_empty_db(self, two_disk):
        empty = OrbitDb(set_hash=two_disk.config_hash(), max_len=6,
                        newton_tol=1e-12, grazing_tol=1e-9)
        with pytest.raises(EmptyDbError):
            zeta_weighted(1.0, Weight.one(), empty, ZetaConfig())


class TestFredholmDet:
    def test_matches_product_oracle(self, two_disk_db, cfg30):
        for lam in (1.0, 0.4 + 0.9j, 2.5 - 1.3j):
            value = fredholm_det(lam, two_disk_db, cfg30)
            oracle = analytic_det(lam)
            assert abs(value - oracle) <= 1e-12 * abs(oracle)

    def test_tends_to_one_far_right(self, two_disk_db, cfg30):
        assert fredholm_det(40.0, two_disk_db, cfg30) == pytest.approx(1.0, abs=1e-12)

    def test_log_derivative_is_zeta_by_finite_differences(self, two_disk_db, cfg30):
        lam, h = 1 + 0.3j, 1e-5
        d_plus = fredholm_det(lam + h, two_disk_db, cfg30)
        d_minus = fredholm_det(lam - h, two_disk_db, cfg30)
        d_center = fredholm_det(lam, two_disk_db, cfg30)
        z1 = zeta_weighted(lam, Weight.one(), two_disk_db, cfg30)
        assert abs((d_plus - d_minus) / (2 * h * d_center) - z1) <= 1e-6 * abs(z1)

    def test_zeta_consistency_at_random_points(self, two_disk_db, cfg30):
        # the log-derivative identity by central differences at 20 points
        # of the convergence half-plane
        rng = np.random.default_rng(20)
        expansion = CycleExpansion(two_disk_db, cfg30)
        h = 1e-5
        for _ in range(20):
            lam = complex(rng.uniform(0.3, 2.5), rng.uniform(-2.0, 2.0))
            fd = complex((expansion.det(lam + h) - expansion.det(lam - h))
                         / (2 * h * expansion.det(lam)))
            z1 = zeta_weighted(lam, Weight.one(), two_disk_db, cfg30)
            assert abs(fd - z1) <= 1e-6 * abs(z1)
            # the analytic derivative of the expansion agrees even tighter
            d, dp = expansion.det_with_derivative(lam)
            assert abs(complex(dp / d) - z1) <= 1e-9 * abs(z1)

    def test_quotient_equals_orbit_sum_in_common_region(self, three_disk_db):
        cfg = ZetaConfig(max_len=6)
        weight = Weight.parse("x + vy")
        for lam in (1.2, 0.8 + 0.5j):
            q = zeta_quotient(lam, weight, three_disk_db, cfg)
            z = zeta_weighted(lam, weight, three_disk_db, cfg)
            assert abs(q - z) <= 1e-9 * max(abs(z), 1e-6)


class TestResonances:
    def test_two_disk_sublattice(self, two_disk_db, cfg30):
        # a reduced region keeps the runtime down; the full rectangle of the
        # acceptance suite is exercised in test_acceptance
        region = Region(-1.3, -0.1, -0.9, 0.9)
        found = find_resonances(region, two_disk_db, cfg30)
        exact = lattice_points(region)
        assert len(found) == len(exact) == 6
        for res in found:
            target, mult = min(exact.items(), key=lambda kv: abs(kv[0] - res.lambda0))
            assert abs(res.lambda0 - target) < 1e-6
            assert res.multiplicity == mult
            assert abs(res.residue_Z1 - mult) < 1e-4
            assert res.newton_residual < 1e-12
            assert res.stable_across_truncation

    def test_conjugation_symmetry(self, two_disk_db, cfg30):
        region = Region(-0.8, -0.2, -0.9, 0.9)
        found = find_resonances(region, two_disk_db, cfg30)
        for res in found:
            partner = min(found, key=lambda r: abs(r.lambda0 - res.lambda0.conjugate()))
            assert abs(partner.lambda0 - res.lambda0.conjugate()) < 1e-8

    def test_all_resonances_decay(self, three_disk_db):
        found = find_resonances(Region(-0.6, 0.3, -0.4, 0.4), three_disk_db,
                                ZetaConfig(max_len=6))
        assert found
        assert all(r.lambda0.real < 0 for r in found)

    def test_three_disk_truncation_cauchy(self, three_disk_db):
        region = Region(-0.6, -0.05, -0.3, 0.3)
        zeros = {}
        for max_len in (3, 4, 5, 6):
            found = find_resonances(region, three_disk_db, ZetaConfig(max_len=max_len))
            zeros[max_len] = max(found, key=lambda r: r.lambda0.real).lambda0
        assert abs(zeros[6] - zeros[5]) < abs(zeros[5] - zeros[4])
        assert abs(zeros[5] - zeros[4]) < abs(zeros[4] - zeros[3])

    def test_empty_db(self, two_disk):
        empty = OrbitDb(set_hash=two_disk.config_hash(), max_len=6,
                        newton_tol=1e-12, grazing_tol=1e-9)
        with pytest.raises(EmptyDbError):
            find_resonances(Region(-1, 0, -1, 1), empty, ZetaConfig())


class TestResidue:
    def test_rank_one_and_two(self, two_disk_db, cfg30):
        for j, expected in ((0, 1.0), (1, 2.0)):
            lam0 = complex(-(j + 1) * LN_LAMBDA / T_2DISK, 0.0)
            for method in ("quotient", "orbit-sum"):
                value = residue(Weight.one(), lam0, 0.1, two_disk_db, cfg30,
                                method=method)
                assert abs(value - expected) < 1e-9, (j, method)

    def test_order_one_vanishes_at_simple_pole(self, two_disk_db, cfg30):
        lam0 = complex(-LN_LAMBDA / T_2DISK, 0.0)
        value = residue(Weight.one(), lam0, 0.1, two_disk_db, cfg30, order=1)
        assert abs(value) < 1e-9

    def test_weighted_residue_consistent_between_methods(self, two_disk_db, cfg30):
        lam0 = complex(-LN_LAMBDA / T_2DISK, 0.0)
        weight = Weight.parse("x/24")
        a = residue(weight, lam0, 0.1, two_disk_db, cfg30, method="quotient")
        b = residue(weight, lam0, 0.1, two_disk_db, cfg30, method="orbit-sum")
        assert abs(a - b) < 1e-9 * max(1.0, abs(a))

    def test_nearby_resonance_guard(self, two_disk_db, cfg30):
        lam0 = complex(-LN_LAMBDA / T_2DISK, 0.0)
        others = [lam0 + 0.15j]
        with pytest.raises(NearbyResonanceError):
            residue(Weight.one(), lam0, 0.1, two_disk_db, cfg30, resonances=others)


class TestResolvent:
    def test_zero_weight(self, three_disk):
        state = PhaseState.of(np.array([3.0, 1.7]), np.array([1.0, 0.0]))
        out = resolvent_apply(three_disk, 2.0, Weight.parse("0"), state)
        assert out.value == 0.0

    def test_short_backward_escape_bound(self, three_disk):
        r_dom = three_disk.default_domain_radius()
        # start just inside the escape sphere moving inward: the backward
        # orbit leaves almost immediately, so |R f| <= tau * max|f|
        centroid = three_disk.centroid
        x = centroid + np.array([r_dom - 1e-3, 0.0])
        state = PhaseState.of(x, np.array([-1.0, 0.0]))
        out = resolvent_apply(three_disk, 2.0, Weight.one(), state, r_dom=r_dom)
        assert out.tau_minus == pytest.approx(-1e-3, abs=1e-9)
        assert abs(out.value) <= 1.1e-3

    def test_identity_battery(self, three_disk):
        weight = Weight.parse("exp(-((x-3)^2 + (y-2)^2)/8)*(1 + vx/2)")
        defects = resolvent_identity_defects(three_disk, 2.0, weight,
                                             n_states=30, seed=5)
        assert float(np.max(defects)) < 1e-3

    def test_cutoff_profile(self, three_disk):
        r_dom = 10.0
        assert radial_cutoff(0.5 * r_dom, r_dom) == 1.0
        assert radial_cutoff(0.8 * r_dom, r_dom) == 1.0
        assert radial_cutoff(0.95 * r_dom, r_dom) == 0.0
        mid = radial_cutoff(0.875 * r_dom, r_dom)
        assert 0.0 < mid < 1.0

    def test_matrix_coeff_zero_weight(self, three_disk):
        est, err = resolvent_matrix_coeff(three_disk, 2.0, Weight.parse("0"),
                                          Weight.one(), n_samples=50, seed=1)
        assert est == 0.0
        assert err == 0.0

    def test_time_reversal_symmetry_statistical(self, two_disk):
        # <R f, g> equals <R g', f'> with f', g' the velocity-reversed
        # weights, by the measure-preserving substitution along the flow;
        # checked against the swapped estimator at 3 sigma
        f = Weight.parse("exp(-((x-3)^2 + y^2)/6)*(1 + vx/2)")
        g = Weight.parse("exp(-((x-3)^2 + y^2)/5)")
        f_rev = Weight.parse("exp(-((x-3)^2 + y^2)/6)*(1 - vx/2)")
        g_rev = g
        n = 4000
        a, da = resolvent_matrix_coeff(two_disk, 1.5, f, g, n_samples=n, seed=7)
        b, db_ = resolvent_matrix_coeff(two_disk, 1.5, g_rev, f_rev, n_samples=n, seed=8)
        sigma = math.hypot(da, db_)
        assert abs(a - b) < 3 * sigma

    def test_stderr_monte_carlo_rate(self, two_disk):
        weight = Weight.parse("exp(-((x-3)^2 + y^2)/6)")
        sizes = [1000, 10_000, 100_000]
        errs = []
        for i, n in enumerate(sizes):
            _, err = resolvent_matrix_coeff(two_disk, 2.0, weight, weight,
                                            n_samples=n, seed=100 + i, dt=1.0)
            errs.append(err)
        slope = np.polyfit(np.log(sizes), np.log(errs), 1)[0]
        assert slope == pytest.approx(-0.5, abs=0.1)

    def test_sample_states_avoid_obstacles(self, three_disk):
        for state in sample_states(three_disk, 200, seed=3):
            for disc in three_disk.discs:
                assert np.linalg.norm(state.x - disc.center) >= disc.radius
