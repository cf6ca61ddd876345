"""HTTP service exposing every command as ``POST /<command>``.

The command line talks to this app, in process by default or over HTTP
with ``--url``.  Library errors come back as ``{kind, message, exit_code}``.
"""

from __future__ import annotations

import traceback
from typing import Any

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import __version__
from .commands import COMMANDS
from .config import load_config
from .errors import DGLabError

HTTP_STATUS = {1: 422, 2: 409, 3: 500}


class CommandRequest(BaseModel):
    config: dict[str, Any]
    seed: int | None = Field(None, ge=0, lt=2**64)
    out: str | None = None


class ErrorBody(BaseModel):
    kind: str
    message: str
    exit_code: int


class Report(BaseModel):
    command: str
    status: str
    exit_code: int
    config: dict[str, Any]
    summary: dict[str, Any]
    tables: dict[str, Any]
    warnings: list[str]


def _error(kind: str, message: str, code: int) -> JSONResponse:
    body = ErrorBody(kind=kind, message=message, exit_code=code)
    return JSONResponse(status_code=HTTP_STATUS[code], content=body.model_dump())


def create_app() -> FastAPI:
    app = FastAPI(title="dglab", version=__version__)

    @app.exception_handler(DGLabError)
    async def _library_error(request: Request, exc: DGLabError):
        return _error(exc.kind, str(exc), exc.exit_code)

    @app.exception_handler(Exception)
    async def _internal_error(request: Request, exc: Exception):
        msg = "".join(traceback.format_exception_only(type(exc), exc)).strip()
        return _error("internal-error", msg, 3)

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "version": __version__, "commands": sorted(COMMANDS)}

    def _route(name: str):
        fn = COMMANDS[name]

        def endpoint(req: CommandRequest) -> Report:
            cfg = load_config(req.config, seed=req.seed)
            if name == "frd-report":
                return Report(**fn(cfg, out_dir=req.out))
            return Report(**fn(cfg))

        endpoint.__name__ = name.replace("-", "_")
        return endpoint

    for name in COMMANDS:
        app.post(f"/{name}", response_model=Report)(_route(name))
    return app
