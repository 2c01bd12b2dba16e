import numpy as np
import pytest
from fastapi.testclient import TestClient

from treewae import topology as tp
from treewae import wae
from treewae.server import build_session, create_app
from treewae.topology import BDT
from treewae.wae import TrainConfig


def star(points):
    births = [0.0] + [p[0] for p in points]
    deaths = [1.0] + [p[1] for p in points]
    return BDT(births, deaths, [tp.NONE] + [0] * len(points),
               normalized=True, scale=(0.0, 4.0))


@pytest.fixture(scope="module")
def client_and_session():
    rng = np.random.Generator(np.random.PCG64(2))
    ens = []
    for _ in range(6):
        pts = [(b, b + p) for b, p in rng.uniform(0.05, 0.4, (3, 2))]
        ens.append(star(pts))
    cfg = TrainConfig(d_latent=2, d_out=4, seed=1, max_epochs=20,
                      stop_rel_decrease=0.0, n_clusters=2)
    model = wae.train(ens, cfg)
    session = build_session(model, ens)
    return TestClient(create_app(session)), session


class TestHealthAndLayout:
    def test_health(self, client_and_session):
        client, _ = client_and_session
        r = client.get("/api/health")
        assert r.status_code == 200
        assert r.json()["status"] == "ok"

    def test_unloaded_returns_503(self):
        client = TestClient(create_app(None))
        assert client.get("/api/layout").status_code == 503

    def test_layout_points(self, client_and_session):
        client, session = client_and_session
        r = client.get("/api/layout")
        assert r.status_code == 200
        points = r.json()["points"]
        assert len(points) == 6
        for i, p in enumerate(points):
            assert p["x"] == pytest.approx(session.layout[i, 0])
            assert p["y"] == pytest.approx(session.layout[i, 1])
            assert {"id", "name", "cluster"} <= set(p)

    def test_layout_stable_across_calls(self, client_and_session):
        client, _ = client_and_session
        assert client.get("/api/layout").json() == client.get("/api/layout").json()


class TestReconstruct:
    def test_member_latent_reproduces_reconstruction(self, client_and_session):
        client, session = client_and_session
        latent = session.model.latent_coords[0].tolist()
        r = client.post("/api/reconstruct", json={"latent": latent})
        assert r.status_code == 200
        body = r.json()
        assert "bdt" in body and "diagram" in body
        got = np.array([[b["birth"], b["death"]] for b in body["bdt"]["branches"]])
        tree = wae.decode(session.model, np.array(latent))
        tree.scale = session.mean_scale
        expect = tp.denormalize(tree)
        assert np.allclose(np.sort(got[:, 0]), np.sort(expect.births), atol=1e-9)

    def test_output_is_valid(self, client_and_session):
        client, _ = client_and_session
        r = client.post("/api/reconstruct", json={"latent": [0.3, -0.2]})
        pts = r.json()["diagram"]["points"]
        assert all(p["birth"] <= p["death"] + 1e-12 for p in pts)

    def test_malformed_body_400(self, client_and_session):
        client, _ = client_and_session
        assert client.post("/api/reconstruct", json={"latent": [0.1]}).status_code == 400


class TestPath:
    def test_two_steps_returns_endpoints(self, client_and_session):
        client, session = client_and_session
        a = session.model.latent_coords[0].tolist()
        b = session.model.latent_coords[1].tolist()
        r = client.post("/api/path", json={"from": a, "to": b, "steps": 2})
        frames = r.json()["frames"]
        assert len(frames) == 2
        ra = client.post("/api/reconstruct", json={"latent": a}).json()
        assert frames[0] == ra

    def test_identical_endpoints_midpoint(self, client_and_session):
        client, session = client_and_session
        a = session.model.latent_coords[0].tolist()
        r = client.post("/api/path", json={"from": a, "to": a, "steps": 3})
        frames = r.json()["frames"]
        assert frames[0] == frames[1] == frames[2]

    def test_frame_count(self, client_and_session):
        client, session = client_and_session
        a = session.model.latent_coords[0].tolist()
        b = session.model.latent_coords[2].tolist()
        for steps in (1, 4, 7):
            r = client.post("/api/path", json={"from": a, "to": b, "steps": steps})
            assert len(r.json()["frames"]) == steps


class TestPrecomputedViews:
    def test_pcv_bounded(self, client_and_session):
        client, _ = client_and_session
        for p in client.get("/api/pcv").json()["points"]:
            assert -1 - 1e-9 <= p["rho1"] <= 1 + 1e-9
            assert -1 - 1e-9 <= p["rho2"] <= 1 + 1e-9

    def test_fli_nonnegative(self, client_and_session):
        client, _ = client_and_session
        for b in client.get("/api/fli").json()["branches"]:
            assert b["fli"] >= 0

    def test_member_endpoint(self, client_and_session):
        client, _ = client_and_session
        r = client.get("/api/member/0")
        assert r.status_code == 200
        assert {"bdt", "diagram", "latent", "name"} <= set(r.json())

    def test_member_out_of_range_404(self, client_and_session):
        client, _ = client_and_session
        assert client.get("/api/member/99").status_code == 404

    def test_identical_requests_identical_responses(self, client_and_session):
        client, _ = client_and_session
        a = client.post("/api/reconstruct", json={"latent": [0.2, 0.1]}).json()
        b = client.post("/api/reconstruct", json={"latent": [0.2, 0.1]}).json()
        assert a == b
