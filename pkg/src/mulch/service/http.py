"""HTTP/JSON front end for the suggestion service."""

from __future__ import annotations

from typing import Any

from fastapi import Body, FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from mulch.service.core import InvalidRequest, ServiceError, SuggestionService


def create_app(service: SuggestionService) -> FastAPI:
    app = FastAPI(title="mulch suggestion service")

    @app.exception_handler(ServiceError)
    async def _service_error(request: Request, exc: ServiceError) -> JSONResponse:
        return JSONResponse(status_code=exc.status, content=exc.to_json())

    @app.exception_handler(RequestValidationError)
    async def _validation_error(request: Request, exc: RequestValidationError) -> JSONResponse:
        err = InvalidRequest(str(exc.errors()))
        return JSONResponse(status_code=err.status, content=err.to_json())

    # Handlers are sync so FastAPI runs them in its thread pool; the service does its own locking.
    @app.post("/experiments")
    def create(body: dict[str, Any] = Body(...)) -> dict:
        return {"id": service.create_experiment(body)}

    @app.get("/experiments/{exp_id}/suggestions")
    def suggestion(exp_id: str) -> dict:
        return service.request_suggestion(exp_id).to_json()

    @app.post("/experiments/{exp_id}/observations")
    def observation(exp_id: str, body: dict[str, Any] = Body(...)) -> dict:
        if "suggestion_id" not in body or "metric" not in body:
            raise InvalidRequest("body needs suggestion_id and metric")
        return service.report_observation(exp_id, str(body["suggestion_id"]), body["metric"])

    @app.patch("/experiments/{exp_id}")
    def update(exp_id: str, body: dict[str, Any] = Body(...)) -> dict:
        return service.update_experiment(exp_id, body)

    @app.get("/experiments/{exp_id}/best")
    def best(exp_id: str) -> dict:
        config, metric = service.get_best(exp_id)
        return {"config": config.as_dict(), "metric": metric}

    return app


def serve(port: int, data_dir: str | None, host: str = "127.0.0.1") -> None:
    import uvicorn

    uvicorn.run(create_app(SuggestionService(data_dir)), host=host, port=port, log_level="info")
