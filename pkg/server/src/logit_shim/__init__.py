"""Thin serving shim exposing a causal LM's next-token logits over HTTP."""

__version__ = "0.1.0"

from .app import create_app
from .runtime import CandidateTokenizationError, ModelRuntime, ServerConfig

__all__ = ["CandidateTokenizationError", "ModelRuntime", "ServerConfig", "create_app"]
