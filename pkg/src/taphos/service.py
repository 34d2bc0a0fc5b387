"""HTTP service over a fitted model bundle.

All endpoints are pure views of the loaded bundle: identical requests
(with their seeds) return identical bodies, and nothing mutates the
bundle. Configuration comes from the environment: TAPHOS_BUNDLE points at
the bundle directory, TAPHOS_PORT picks the port.
"""

from __future__ import annotations

import os
from pathlib import Path

from fastapi import FastAPI, HTTPException, Query
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field

from . import __version__
from .bundle import (
    BudgetError,
    BundleError,
    ModelBundle,
    before_after_payload,
    effects_payload,
    eig_scan_payload,
    load_bundle,
    predict_payload,
    schema_payload,
)
from .pmi import PmiError
from .sampler import SamplerConfig
from .schema import SchemaError

MAX_GRID_POINTS = 4001


class PredictRequest(BaseModel):
    covariates: dict[str, str] = Field(default_factory=dict)
    observations: dict[str, bool] = Field(default_factory=dict)
    interval_masses: list[float] = Field(default=[0.5, 0.9])
    grid_points: int = 1001


class DesignBody(BaseModel):
    num_cadavers: int
    observation_day: float
    covariate_levels: dict[str, str] = Field(default_factory=dict)
    tracked_characteristics: list[str] | None = None


class EigRequest(BaseModel):
    target: str | list[str]
    designs: list[DesignBody]
    estimator: str = "naive"
    n_outer: int = 2000
    m_conditional: int = 1000
    m_marginal: int = 1000
    seed: int = 0


class RefitBody(BaseModel):
    num_chains: int = 2
    warmup_iterations: int = 300
    samples_per_chain: int = 300
    seed: int = 0


class BeforeAfterRequest(BaseModel):
    target: str | list[str]
    design: DesignBody
    refit: RefitBody = Field(default_factory=RefitBody)


def _validate_case_fields(bundle: ModelBundle, request: PredictRequest) -> None:
    for name, level in request.covariates.items():
        try:
            bundle.covariates.covariate(name).level_index(level)
        except SchemaError as exc:
            if level.strip().lower() == "unknown":
                continue  # collapses via the missing rule
            raise HTTPException(
                status_code=400,
                detail={"field": f"covariates.{name}", "message": str(exc)},
            ) from exc
    for name in request.observations:
        try:
            bundle.characteristics.index_of(name)
        except SchemaError as exc:
            raise HTTPException(
                status_code=400,
                detail={"field": f"observations.{name}", "message": str(exc)},
            ) from exc


def create_app(bundle: ModelBundle | str | Path | None = None) -> FastAPI:
    app = FastAPI(title="decomposition model service", version=__version__)
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    if isinstance(bundle, (str, Path)):
        bundle = load_bundle(bundle)
    app.state.bundle = bundle

    def current() -> ModelBundle:
        loaded = app.state.bundle
        if loaded is None:
            raise HTTPException(status_code=503, detail="model not loaded")
        return loaded

    @app.get("/v1/health")
    def health() -> dict:
        loaded = app.state.bundle
        return {
            "status": "ok" if loaded is not None else "no-model",
            "service_version": __version__,
            "model_version": None if loaded is None else loaded.version,
        }

    @app.get("/v1/schema")
    def schema() -> dict:
        return schema_payload(current())

    @app.post("/v1/predict-pmi")
    def predict(request: PredictRequest) -> dict:
        loaded = current()
        _validate_case_fields(loaded, request)
        if not 3 <= request.grid_points <= MAX_GRID_POINTS:
            raise HTTPException(status_code=400, detail="grid_points out of range")
        try:
            return predict_payload(
                loaded,
                request.covariates,
                request.observations,
                tuple(request.interval_masses),
                request.grid_points,
            )
        except (SchemaError, PmiError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc

    @app.post("/v1/eig")
    def eig_scan(request: EigRequest) -> dict:
        loaded = current()
        try:
            return eig_scan_payload(
                loaded,
                request.target,
                [d.model_dump() for d in request.designs],
                estimator=request.estimator,
                n_outer=request.n_outer,
                m_conditional=request.m_conditional,
                m_marginal=request.m_marginal,
                seed=request.seed,
            )
        except BudgetError as exc:
            raise HTTPException(status_code=413, detail=str(exc)) from exc
        except (SchemaError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc

    @app.post("/v1/before-after")
    def before_after(request: BeforeAfterRequest) -> dict:
        loaded = current()
        refit = SamplerConfig(
            num_chains=request.refit.num_chains,
            warmup_iterations=min(request.refit.warmup_iterations, 2000),
            samples_per_chain=min(request.refit.samples_per_chain, 2000),
            seed=request.refit.seed,
        )
        try:
            return before_after_payload(
                loaded, request.target, request.design.model_dump(), refit
            )
        except BundleError as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from exc
        except (SchemaError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc

    @app.get("/v1/effects")
    def effects(quantiles: str = Query(default="0.025,0.25,0.5,0.75,0.975")) -> dict:
        loaded = current()
        try:
            parsed = tuple(float(q) for q in quantiles.split(",") if q.strip())
            return effects_payload(loaded, parsed)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=f"invalid quantile list: {exc}") from exc

    dist = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    if dist.is_dir():  # pragma: no cover - depends on the built workbench
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=dist, html=True), name="workbench")
    return app


def main() -> None:  # pragma: no cover - thin launcher
    import uvicorn

    bundle_path = os.environ.get("TAPHOS_BUNDLE")
    if not bundle_path:
        raise SystemExit("set TAPHOS_BUNDLE to the model bundle directory")
    port = int(os.environ.get("TAPHOS_PORT", "8000"))
    uvicorn.run(create_app(bundle_path), host="0.0.0.0", port=port)


if __name__ == "__main__":  # pragma: no cover
    main()
