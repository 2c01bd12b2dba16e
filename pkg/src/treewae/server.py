"""Read-only HTTP JSON API over a trained model for the latent explorer.

All state is precomputed at load time and immutable afterwards; request
handlers only read it or run stateless decodes, so concurrent access is safe.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field

from . import analytics as an
from . import barycenter as bc
from . import wae as wae_mod
from .topology import BDT, bdt_to_diagram, bdt_to_json, denormalize
from .wae import TrainedModel

__all__ = ["SessionState", "build_session", "create_app"]


@dataclass
class SessionState:
    model: TrainedModel
    ensemble: list[BDT]
    barycenter: BDT
    layout: np.ndarray
    clusters: list[int]
    pcv: list
    fli: an.FLIReport
    mean_scale: tuple[float, float]


def build_session(model: TrainedModel, ensemble: list[BDT]) -> SessionState:
    reference = bc.barycenter(ensemble)
    layout = an.layout2d(model)
    k = min(model.config.n_clusters, len(ensemble))
    cents = wae_mod._latent_kmeans(layout, k, model.config.seed)
    clusters = np.argmin(
        ((layout[:, None, :] - cents[None, :, :]) ** 2).sum(-1), axis=1
    ).tolist()
    scales = [s for s in model.member_scales if s is not None]
    mean_scale = (
        float(np.mean([s[0] for s in scales])),
        float(np.mean([s[1] for s in scales])),
    ) if scales else (0.0, 1.0)
    return SessionState(
        model=model,
        ensemble=ensemble,
        barycenter=reference,
        layout=layout,
        clusters=clusters,
        pcv=an.pcv(model, ensemble, reference=reference),
        fli=an.fli(model, ensemble, reference=reference),
        mean_scale=mean_scale,
    )


class ReconstructRequest(BaseModel):
    latent: list[float]


class PathRequest(BaseModel):
    frm: list[float] = Field(alias="from")
    to: list[float]
    steps: int


def _decode_payload(session: SessionState, latent) -> dict:
    tree = wae_mod.decode(session.model, np.asarray(latent, dtype=float))
    tree.scale = session.mean_scale
    plain = denormalize(tree)
    diagram = bdt_to_diagram(plain)
    return {
        "bdt": bdt_to_json(plain),
        "diagram": {"points": [{"birth": p.birth, "death": p.death}
                               for p in diagram.points]},
    }


def create_app(session: SessionState | None = None,
               static_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="treewae explorer API")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
        allow_headers=["*"],
    )

    def need_session() -> SessionState:
        if session is None:
            raise HTTPException(status_code=503, detail="no model loaded")
        return session

    @app.get("/api/health")
    def health():
        return {"status": "ok" if session is not None else "empty",
                "members": 0 if session is None else len(session.ensemble)}

    @app.get("/api/layout")
    def layout():
        s = need_session()
        points = [
            {"id": i, "name": s.model.member_names[i],
             "x": float(s.layout[i, 0]), "y": float(s.layout[i, 1]),
             "cluster": int(s.clusters[i])}
            for i in range(len(s.ensemble))
        ]
        return {"points": points}

    @app.post("/api/reconstruct")
    def reconstruct(req: ReconstructRequest):
        s = need_session()
        want = s.model.config.d_latent
        if len(req.latent) != want or not all(np.isfinite(v) for v in req.latent):
            raise HTTPException(status_code=400,
                                detail=f"latent must be {want} finite numbers")
        return _decode_payload(s, req.latent)

    @app.post("/api/path")
    def path(req: PathRequest):
        s = need_session()
        want = s.model.config.d_latent
        if len(req.frm) != want or len(req.to) != want or req.steps < 1:
            raise HTTPException(status_code=400, detail="malformed path request")
        a, b = np.asarray(req.frm, float), np.asarray(req.to, float)
        if req.steps == 1:
            ts = [0.0]
        else:
            ts = np.linspace(0.0, 1.0, req.steps)
        frames = [_decode_payload(s, (1 - t) * a + t * b) for t in ts]
        return {"frames": frames}

    @app.get("/api/pcv")
    def pcv_view():
        s = need_session()
        return {"points": [
            {"branch": p.branch, "rho1": p.rho1, "rho2": p.rho2,
             "degenerate": p.degenerate} for p in s.pcv
        ]}

    @app.get("/api/fli")
    def fli_view():
        s = need_session()
        r = s.fli
        return {"branches": [
            {"branch": b, "originalPersistence": o, "latentPersistence": l,
             "fli": f}
            for b, o, l, f in zip(r.branches, r.original_persistence,
                                  r.latent_persistence, r.fli)
        ]}

    @app.get("/api/member/{index}")
    def member(index: int):
        s = need_session()
        if not 0 <= index < len(s.ensemble):
            raise HTTPException(status_code=404, detail="member index out of range")
        tree = s.ensemble[index]
        plain = denormalize(tree) if tree.normalized else tree
        diagram = bdt_to_diagram(plain)
        return {
            "id": index,
            "name": s.model.member_names[index],
            "latent": s.model.latent_coords[index].tolist(),
            "bdt": bdt_to_json(plain),
            "diagram": {"points": [{"birth": p.birth, "death": p.death}
                                   for p in diagram.points]},
        }

    if static_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")
    return app
