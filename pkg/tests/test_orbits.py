import math

import numpy as np
import pytest

from ndisk.errors import OccludedLegError
from ndisk.flow import Time, advance
from ndisk.geometry import Disc, ObstacleSet
from ndisk.orbits import (
    Itinerary,
    NewtonOptions,
    OrbitDb,
    assemble_orbit,
    build_db,
    enumerate_itineraries,
    find_orbit,
    verify_orbit,
)


from oracles import mobius_prime_cycle_count


class TestItinerary:
    def test_canonical_rotation(self):
        assert Itinerary.canonical([1, 2, 0]).symbols == (0, 1, 2)

    def test_rejects_adjacent_repeat(self):
        with pytest.raises(ValueError, match="adjacent repeat"):
            Itinerary((0, 0, 1))
        with pytest.raises(ValueError, match="adjacent repeat"):
            Itinerary((0, 1, 0, 1, 0))  # wraps onto itself

    def test_rejects_powers(self):
        with pytest.raises(ValueError, match="power"):
            Itinerary((0, 1, 0, 1))

    def test_label_round_trip(self):
        itin = Itinerary((0, 1, 2))
        assert itin.label == "123"
        assert Itinerary.from_label("123") == itin


class TestEnumeration:
    def test_three_symbols_short_lengths(self):
        labels = {i.label for i in enumerate_itineraries(3, 2)}
        assert labels == {"12", "13", "23"}
        labels3 = {i.label for i in enumerate_itineraries(3, 3)} - labels
        assert labels3 == {"123", "132"}
        count4 = len(enumerate_itineraries(3, 4)) - len(enumerate_itineraries(3, 3))
        assert count4 == 3

    def test_counts_match_oracle(self):
        for n_symbols in (2, 3, 4):
            for length in range(2, 11):
                got = len([i for i in enumerate_itineraries(n_symbols, length)
                           if len(i) == length])
                assert got == mobius_prime_cycle_count(n_symbols, length), \
                    (n_symbols, length)

    def test_single_obstacle_empty(self):
        assert enumerate_itineraries(1, 6) == []


class TestFindOrbit:
    def test_two_disk_axial(self, two_disk):
        orbit = find_orbit(two_disk, Itinerary((0, 1)))
        assert orbit.points[0] == pytest.approx([1.0, 0.0], abs=1e-10)
        assert orbit.points[1] == pytest.approx([5.0, 0.0], abs=1e-10)
        assert orbit.T_prim == pytest.approx(8.0, abs=1e-12)
        assert orbit.hyp.trace == pytest.approx(98.0, abs=1e-9)
        assert orbit.newton_residual < 1e-12

    def test_three_disk_face_orbit_matches_two_disk(self, three_disk):
        orbit = find_orbit(three_disk, Itinerary((0, 1)))
        assert orbit.T_prim == pytest.approx(8.0, abs=1e-12)
        assert orbit.hyp.trace == pytest.approx(98.0, abs=1e-9)

    def test_adjacent_repeat_rejected_up_front(self):
        with pytest.raises(ValueError):
            Itinerary((0, 0))

    def test_rotation_invariance(self, three_disk):
        theta = 0.83
        rot = np.array([[math.cos(theta), -math.sin(theta)],
                        [math.sin(theta), math.cos(theta)]])
        shift = np.array([1.3, -2.1])
        moved = ObstacleSet(tuple(Disc(rot @ d.center + shift, d.radius)
                                  for d in three_disk.discs))
        for label in ("123", "1213"):
            a = find_orbit(three_disk, Itinerary.from_label(label))
            b = find_orbit(moved, Itinerary.from_label(label))
            assert b.T_prim == pytest.approx(a.T_prim, abs=1e-9)
            assert b.hyp.trace == pytest.approx(a.hyp.trace, rel=1e-9)
            assert rot @ a.points[0] + shift == pytest.approx(b.points[0], abs=1e-8)

    def test_occluded_leg_pruned(self):
        # a small third disc sits in the corridor between discs 1 and 2
        obstacles = ObstacleSet((Disc(np.array([0.0, 0.0]), 1.0),
                                 Disc(np.array([6.0, 0.0]), 1.0),
                                 Disc(np.array([3.0, 0.0]), 0.4)))
        with pytest.raises(OccludedLegError):
            find_orbit(obstacles, Itinerary((0, 1)))

    def test_loop_closure_through_simulator(self, three_disk, three_disk_db):
        # re-simulate each found orbit with the honest flow for one period:
        # a full-stack oracle independent of the Newton construction.  One
        # period ends exactly at the starting bounce, so close the loop by
        # bounce count and check the elapsed time against the period.
        from ndisk.flow import Bounces

        for orbit in three_disk_db.orbits():
            n = len(orbit.itinerary)
            res = advance(three_disk, orbit.states[0], Bounces(n))
            assert res.elapsed == pytest.approx(orbit.T_prim, abs=1e-8), \
                orbit.itinerary.label
            assert res.final.x == pytest.approx(orbit.states[0].x, abs=1e-8)
            assert res.final.v == pytest.approx(orbit.states[0].v, abs=1e-8)
            assert [c.obstacle for c in res.collisions] == \
                list(orbit.itinerary.symbols[1:]) + [orbit.itinerary.symbols[0]]

    def test_time_horizon_on_a_bounce_reports_outgoing_state(self, two_disk):
        # the two-disk period is exactly representable, so Time(T) lands on
        # the closing bounce; ties resolve to the post-reflection state
        orbit = find_orbit(two_disk, Itinerary((0, 1)))
        res = advance(two_disk, orbit.states[0], Time(orbit.T_prim))
        assert res.final.x == pytest.approx(orbit.states[0].x, abs=1e-12)
        assert res.final.v == pytest.approx(orbit.states[0].v, abs=1e-12)
        assert len(res.collisions) == 2

    def test_specular_law_at_stored_bounces(self, three_disk, three_disk_db):
        from ndisk.flow import reflect

        for orbit in three_disk_db.orbits():
            n = len(orbit.itinerary)
            for k in range(n):
                incoming = orbit.states[k - 1].v
                disc = three_disk.discs[orbit.itinerary.symbols[k]]
                inward = disc.center - orbit.points[k]
                inward = inward / np.linalg.norm(inward)
                assert reflect(incoming, inward) == pytest.approx(
                    orbit.states[k].v, abs=1e-10)


class TestVerify:
    def test_newton_output_verifies(self, two_disk):
        orbit = find_orbit(two_disk, Itinerary((0, 1)))
        report = verify_orbit(two_disk, orbit)
        assert report.specular_defect < 1e-10
        assert report.occlusion_ok
        assert report.ok()

    def test_perturbed_angles_fail(self, two_disk):
        orbit = find_orbit(two_disk, Itinerary((0, 1)))
        bad = assemble_orbit(two_disk, orbit.itinerary, orbit.thetas + 1e-3)
        report = verify_orbit(two_disk, bad)
        assert 1e-4 < report.specular_defect < 1e-2
        assert not report.ok()

    def test_wrong_set_fails(self, two_disk, three_disk):
        orbit = find_orbit(three_disk, Itinerary((0, 2)))
        report = verify_orbit(two_disk, orbit)
        assert not report.ok()


class TestDatabase:
    def test_three_disk_counts(self, three_disk):
        db = build_db(three_disk, max_len=4)
        assert len(db.entries) == 8  # 3 + 2 + 3
        assert not db.pruned and not db.failed
        counts = db.counts_by_length()
        assert counts[2]["found"] == 3
        assert counts[3]["found"] == 2
        assert counts[4]["found"] == 3

    def test_two_disk_single_orbit(self, two_disk_db):
        assert sorted(two_disk_db.entries) == ["12"]

    def test_save_load_round_trip(self, tmp_path, three_disk, three_disk_db):
        path = tmp_path / "orbits.jsonl"
        three_disk_db.save(str(path))
        loaded = OrbitDb.load(str(path), three_disk)
        assert sorted(loaded.entries) == sorted(three_disk_db.entries)
        for label in loaded.entries:
            a, b = loaded.entries[label], three_disk_db.entries[label]
            assert a.T_prim == pytest.approx(b.T_prim, abs=1e-14)
            assert a.hyp.trace == pytest.approx(b.hyp.trace, rel=1e-14)

    def test_stale_hash_refused(self, tmp_path, two_disk, two_disk_db, three_disk):
        path = tmp_path / "orbits.jsonl"
        two_disk_db.save(str(path))
        with pytest.raises(ValueError, match="stale"):
            OrbitDb.load(str(path), three_disk)

    def test_newton_options_tighten_residual(self, two_disk):
        orbit = find_orbit(two_disk, Itinerary((0, 1)), NewtonOptions(tol=1e-13))
        assert orbit.newton_residual < 1e-13
