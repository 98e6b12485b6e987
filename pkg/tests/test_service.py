import math

import pytest
from fastapi.testclient import TestClient

from ndisk.service.app import create_app

TWO_DISK = [{"center": [0.0, 0.0], "radius": 1.0},
            {"center": [6.0, 0.0], "radius": 1.0}]
THREE_DISK = [{"center": [0.0, 0.0], "radius": 1.0},
              {"center": [6.0, 0.0], "radius": 1.0},
              {"center": [3.0, 3.0 * math.sqrt(3.0)], "radius": 1.0}]


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app())


def test_health(client):
    body = client.get("/health").json()
    assert body["status"] == "ok"


class TestGeometryEndpoint:
    def test_admissible(self, client):
        body = client.post("/geometry/check", json={"discs": THREE_DISK}).json()
        assert body["disjoint_ok"] and body["no_eclipse_ok"]
        assert body["violations"] == []
        assert body["set_hash"]

    def test_eclipse_violation(self, client):
        discs = TWO_DISK + [{"center": [3.0, 1.0], "radius": 0.4}]
        body = client.post("/geometry/check", json={"discs": discs}).json()
        assert body["disjoint_ok"] and not body["no_eclipse_ok"]
        assert [1, 2, 3] in body["violations"]

    def test_overlap_reported(self, client):
        discs = [{"center": [0.0, 0.0], "radius": 1.0},
                 {"center": [1.0, 0.0], "radius": 1.0}]
        body = client.post("/geometry/check", json={"discs": discs}).json()
        assert not body["disjoint_ok"]
        assert "disjoint" in body["first_violation"]

    def test_bad_radius_is_422(self, client):
        discs = [{"center": [0.0, 0.0], "radius": -1.0}]
        assert client.post("/geometry/check", json={"discs": discs}).status_code == 422


class TestSimulateEndpoint:
    def test_axial_bounce(self, client):
        body = client.post("/simulate", json={
            "discs": TWO_DISK,
            "state": {"x": [1.0, 0.0], "v": [1.0, 0.0]},
            "until": {"kind": "bounces", "value": 1},
        }).json()
        assert body["termination"] == "BounceLimit"
        [coll] = body["collisions"]
        assert coll["obstacle"] == 2  # 1-based label
        assert coll["point"] == pytest.approx([5.0, 0.0])
        assert body["elapsed"] == pytest.approx(4.0)

    def test_invalid_state_is_422(self, client):
        response = client.post("/simulate", json={
            "discs": TWO_DISK,
            "state": {"x": [0.0, 0.0], "v": [1.0, 0.0]},
            "until": {"kind": "time", "value": 1.0},
        })
        assert response.status_code == 422  # origin inside obstacle 1


class TestOrbitsEndpoint:
    def test_three_disk_counts(self, client):
        body = client.post("/orbits/build", json={
            "discs": THREE_DISK, "max_len": 4,
        }).json()
        assert len(body["orbits"]) == 8
        assert body["counts_by_length"] == {
            "2": {"found": 3, "pruned": 0, "failed": 0},
            "3": {"found": 2, "pruned": 0, "failed": 0},
            "4": {"found": 3, "pruned": 0, "failed": 0},
        }
        twelve = next(o for o in body["orbits"] if o["itinerary"] == "12")
        assert twelve["T_prim"] == pytest.approx(8.0)
        assert twelve["trace"] == pytest.approx(98.0)


class TestSpectralEndpoints:
    def test_zeta_eval(self, client):
        body = client.post("/zeta/eval", json={
            "discs": TWO_DISK,
            "lam": [1.0, 0.0],
            "zeta": {"max_len": 12},
        }).json()
        lam2 = 49.0 + 20.0 * math.sqrt(6.0)
        oracle = sum(8.0 * math.exp(-8.0 * k) / (lam2 ** k * (1 - lam2 ** (-k)) ** 2)
                     for k in range(1, 40))
        assert body["zeta"][0] == pytest.approx(oracle, rel=1e-12)
        assert body["zeta"][1] == 0.0
        assert body["orbit_count"] == 1

    def test_resonances_with_grid_dump(self, client):
        body = client.post("/resonances/find", json={
            "discs": TWO_DISK,
            "region": {"re_min": -0.8, "re_max": -0.2, "im_min": -0.5, "im_max": 0.5},
            "zeta": {"max_len": 12},
            "dump_grid": [5, 5],
        }).json()
        assert len(body["resonances"]) == 1
        leading = body["resonances"][0]
        assert leading["re"] == pytest.approx(-math.log(49 + 20 * math.sqrt(6)) / 8, abs=1e-6)
        assert leading["residue_re"] == pytest.approx(1.0, abs=1e-4)
        assert body["any_stable"]
        assert len(body["det_grid"]) == 25

    def test_resolvent_sample(self, client):
        body = client.post("/resolvent/sample", json={
            "discs": THREE_DISK,
            "lam": [2.0, 0.0],
            "weight": {"re": "exp(-((x-3)^2 + (y-2)^2)/8)"},
            "n_samples": 40,
            "identity_states": 5,
            "rng_seed": 2,
        }).json()
        assert body["identity_ok"] is True
        assert body["identity_defects_max"] < 1e-3
        assert body["stderr"] > 0

    def test_trapped_grid(self, client):
        body = client.post("/trapped-set/grid", json={
            "discs": TWO_DISK, "n_s": 12, "n_p": 9, "n_bounce": 6,
        }).json()
        assert body["trapped_cell_count"] == 2
        assert body["trapped"][0][0][4] is True
        assert body["trapped"][1][6][4] is True
