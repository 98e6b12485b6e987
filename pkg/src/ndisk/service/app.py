"""FastAPI service exposing the billiard computations.

The service is stateless per request except for an orbit-database cache
keyed by obstacle-set hash and search tolerances, which makes repeated
zeta/resonance queries against the same configuration cheap.
"""

from __future__ import annotations

import threading

import numpy as np
from fastapi import FastAPI, HTTPException

from .. import __version__
from ..errors import EmptyDbError, NdiskError
from ..flow import trapped_set_grid
from ..geometry import ObstacleSet, no_eclipse_check, obstacles_from_dict
from ..orbits import NewtonOptions, OrbitDb, build_db
from ..spectral import (
    ZetaConfig,
    fredholm_det,
    find_resonances,
    determinant_grid,
    resolvent_identity_defects,
    resolvent_matrix_coeff,
    zeta_weighted,
)
from . import schemas

_db_cache: dict[tuple, OrbitDb] = {}
_db_lock = threading.Lock()


def _obstacles(discs: list[schemas.DiscModel]) -> ObstacleSet:
    try:
        return obstacles_from_dict({"discs": [d.model_dump() for d in discs]})
    except ValueError as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from exc


def _cached_db(obstacles: ObstacleSet, max_len: int,
               tolerances: schemas.TolerancesModel) -> OrbitDb:
    key = (obstacles.config_hash(), max_len, tolerances.grazing_tol, tolerances.newton_tol)
    with _db_lock:
        if key not in _db_cache:
            opts = NewtonOptions(tol=tolerances.newton_tol, grazing_tol=tolerances.grazing_tol)
            _db_cache[key] = build_db(obstacles, max_len, opts)
        return _db_cache[key]


def create_app() -> FastAPI:
    app = FastAPI(title="ndisk", version=__version__,
                  description="Open planar disc-billiard dynamics and resonances")

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "version": __version__}

    @app.post("/geometry/check", response_model=schemas.GeometryCheckResponse)
    def geometry_check(req: schemas.GeometryCheckRequest) -> schemas.GeometryCheckResponse:
        try:
            obstacles = obstacles_from_dict(
                {"discs": [d.model_dump() for d in req.discs]}
            )
        except ValueError as exc:
            return schemas.GeometryCheckResponse(
                disjoint_ok=False, no_eclipse_ok=False, violations=[],
                first_violation=str(exc),
            )
        report = no_eclipse_check(obstacles)
        return schemas.GeometryCheckResponse(
            disjoint_ok=True,
            no_eclipse_ok=report.holds,
            violations=list(report.violations),
            first_violation=None if report.holds else
            "obstacle %d meets the hull of obstacles %d and %d" % (
                report.violations[0][2], report.violations[0][0], report.violations[0][1]),
            set_hash=obstacles.config_hash(),
        )

    @app.post("/simulate", response_model=schemas.SimulateResponse)
    def simulate(req: schemas.SimulateRequest) -> schemas.SimulateResponse:
        obstacles = _obstacles(req.discs)
        try:
            from ..flow import advance

            result = advance(obstacles, req.state.to_domain(), req.until.to_domain(),
                             grazing_tol=req.tolerances.grazing_tol, r_dom=req.r_dom)
        except NdiskError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return schemas.SimulateResponse.from_domain(result)

    @app.post("/orbits/build", response_model=schemas.OrbitsResponse)
    def orbits_build(req: schemas.OrbitsRequest) -> schemas.OrbitsResponse:
        obstacles = _obstacles(req.discs)
        db = _cached_db(obstacles, req.max_len, req.tolerances)
        return schemas.OrbitsResponse.from_domain(db)

    @app.post("/zeta/eval", response_model=schemas.ZetaEvalResponse)
    def zeta_eval(req: schemas.ZetaEvalRequest) -> schemas.ZetaEvalResponse:
        obstacles = _obstacles(req.discs)
        db = _cached_db(obstacles, req.zeta.max_len, req.tolerances)
        lam = complex(req.lam[0], req.lam[1])
        cfg = req.zeta.to_domain()
        try:
            import warnings

            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                z = zeta_weighted(lam, req.weight.to_domain(), db, cfg)
            d = fredholm_det(lam, db, cfg)
        except (EmptyDbError, NdiskError) as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return schemas.ZetaEvalResponse(
            lam=req.lam, zeta=(z.real, z.imag), determinant=(d.real, d.imag),
            orbit_count=len(db.entries),
        )

    @app.post("/resonances/find", response_model=schemas.ResonancesResponse)
    def resonances_find(req: schemas.ResonancesRequest) -> schemas.ResonancesResponse:
        obstacles = _obstacles(req.discs)
        db = _cached_db(obstacles, req.zeta.max_len, req.tolerances)
        cfg = req.zeta.to_domain()
        try:
            found = find_resonances(req.region.to_domain(), db, cfg, rng_seed=req.rng_seed)
        except (EmptyDbError, NdiskError) as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        grid = None
        if req.dump_grid is not None:
            samples = determinant_grid(req.region.to_domain(), db, cfg,
                                       n_re=req.dump_grid[0], n_im=req.dump_grid[1])
            grid = [schemas.DetSampleModel(re=re, im=im, det_re=d.real, det_im=d.imag)
                    for re, im, d in samples]
        return schemas.ResonancesResponse(
            resonances=[schemas.ResonanceModel.from_domain(r) for r in found],
            any_stable=any(r.stable_across_truncation for r in found),
            det_grid=grid,
        )

    @app.post("/resolvent/sample", response_model=schemas.ResolventResponse)
    def resolvent_sample(req: schemas.ResolventRequest) -> schemas.ResolventResponse:
        obstacles = _obstacles(req.discs)
        lam = complex(req.lam[0], req.lam[1])
        f = req.weight.to_domain()
        g = req.weight_g.to_domain() if req.weight_g is not None else f
        try:
            estimate, stderr = resolvent_matrix_coeff(
                obstacles, lam, f, g, r_dom=req.r_dom,
                n_samples=req.n_samples, seed=req.rng_seed, dt=req.dt,
            )
        except NdiskError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        response = schemas.ResolventResponse(
            matrix_coefficient=(estimate.real, estimate.imag),
            stderr=stderr,
            n_samples=req.n_samples,
        )
        if req.identity_states > 0:
            defects = resolvent_identity_defects(
                obstacles, lam, f, n_states=req.identity_states,
                seed=req.rng_seed, r_dom=req.r_dom, dt=req.dt,
            )
            response.identity_defects_max = float(np.max(defects))
            response.identity_defects_mean = float(np.mean(defects))
            response.identity_ok = bool(np.max(defects) < response.identity_threshold)
        return response

    @app.post("/trapped-set/grid", response_model=schemas.TrappedSetResponse)
    def trapped_set(req: schemas.TrappedSetRequest) -> schemas.TrappedSetResponse:
        obstacles = _obstacles(req.discs)
        grid = trapped_set_grid(obstacles, r_dom=req.r_dom, n_s=req.n_s,
                                n_p=req.n_p, n_bounce=req.n_bounce,
                                grazing_tol=req.tolerances.grazing_tol)
        return schemas.TrappedSetResponse(
            domain_radius=grid.domain_radius,
            n_s=grid.n_s, n_p=grid.n_p, n_bounce=grid.n_bounce,
            gamma_plus=grid.gamma_plus.tolist(),
            gamma_minus=grid.gamma_minus.tolist(),
            trapped=grid.trapped.tolist(),
            trapped_cell_count=int(grid.trapped.sum()),
        )

    return app


app = create_app()
