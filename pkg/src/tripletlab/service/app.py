"""HTTP facade over the lab: one POST endpoint per operation."""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..harness.config import ConfigError
from . import handlers, schemas


def create_app() -> FastAPI:
    app = FastAPI(title="tripletlab", version=__version__)

    @app.exception_handler(ConfigError)
    async def config_error(_request: Request, err: ConfigError):
        return JSONResponse(status_code=400, content={"detail": str(err)})

    @app.exception_handler(FileNotFoundError)
    async def missing_file(_request: Request, err: FileNotFoundError):
        return JSONResponse(status_code=404, content={"detail": str(err)})

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.post("/gen-data", response_model=schemas.GenDataResponse)
    def gen_data(req: schemas.GenDataRequest):
        return handlers.gen_data(req)

    @app.post("/train", response_model=schemas.TrainResponse)
    def train(req: schemas.TrainRequest):
        return handlers.train(req)

    @app.post("/evaluate", response_model=schemas.EvaluateResponse)
    def evaluate(req: schemas.EvaluateRequest):
        return handlers.evaluate(req)

    @app.post("/attack", response_model=schemas.AttackResponse)
    def attack(req: schemas.AttackRequest):
        return handlers.attack(req)

    @app.post("/sweep", response_model=schemas.SweepResponse)
    def sweep(req: schemas.SweepRequest):
        return handlers.sweep(req)

    @app.post("/report", response_model=schemas.ReportResponse)
    def report(req: schemas.ReportRequest):
        return handlers.report(req)

    return app
