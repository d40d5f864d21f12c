"""HTTP surface: POST /logits and GET /info."""

from __future__ import annotations

import json
from pathlib import Path

from fastapi import FastAPI
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .runtime import CandidateTokenizationError, ModelRuntime, ServerConfig


class LogitsRequest(BaseModel):
    prompt: str
    candidates: list[str]


def create_app(config: ServerConfig, runtime: ModelRuntime | None = None) -> FastAPI:
    runtime = runtime or ModelRuntime(config)
    app = FastAPI(title="logit-shim")

    first_token_ids: dict[str, int] = {}
    if config.pool_path:
        pool = json.loads(Path(config.pool_path).read_text(encoding="utf-8"))
        words = [w for wordlist in pool.values() for w in wordlist]
        first_token_ids = runtime.token_id_map(words)

    @app.get("/info")
    def info():
        return {
            "model": config.model,
            "max_prompt_chars": config.max_prompt_chars,
            "first_token_ids": first_token_ids,
        }

    @app.post("/logits")
    def logits(request: LogitsRequest):
        if len(request.prompt) > config.max_prompt_chars:
            return JSONResponse(
                status_code=413, content={"max_prompt_chars": config.max_prompt_chars}
            )
        if not request.candidates:
            return JSONResponse(status_code=422, content={"detail": "no candidates"})
        try:
            values = runtime.candidate_logits(request.prompt, request.candidates)
        except CandidateTokenizationError as exc:
            return JSONResponse(
                status_code=422,
                content={"detail": "candidate produced no tokens", "candidate": exc.candidate},
            )
        return {"logits": values}

    return app
