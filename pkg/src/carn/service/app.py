"""HTTP surface of the experiment harness.

Endpoints run synchronously: desk-scale jobs finish in seconds to minutes,
and callers (including the CLI client) block on the result. Invalid
requests map to 400, everything else to 500.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException

from .. import __version__
from . import handlers, schemas


def create_app():
    app = FastAPI(title="carn", version=__version__)

    def run(handler, req):
        try:
            return handler(req)
        except (ValueError, FileNotFoundError, TypeError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))

    @app.get("/health", response_model=schemas.HealthResponse)
    def health():
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.post("/generate", response_model=schemas.GenerateResponse)
    def generate(req: schemas.GenerateRequest):
        return run(handlers.handle_generate, req)

    @app.post("/train", response_model=schemas.TrainResponse)
    def train(req: schemas.TrainRequest):
        return run(handlers.handle_train, req)

    @app.post("/evaluate", response_model=schemas.EvaluateResponse)
    def evaluate(req: schemas.EvaluateRequest):
        return run(handlers.handle_evaluate, req)

    @app.post("/ablation", response_model=schemas.AblationResponse)
    def ablation(req: schemas.AblationRequest):
        return run(handlers.handle_ablation, req)

    @app.post("/gradcheck", response_model=schemas.GradcheckResponse)
    def gradcheck(req: schemas.GradcheckRequest):
        return run(handlers.handle_gradcheck, req)

    return app


app = create_app()
