"""Model loading and next-token logit extraction."""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass

import torch
from transformers import AutoModelForCausalLM, AutoTokenizer

logger = logging.getLogger("logit_shim")


@dataclass
class ServerConfig:
    model: str  # model id or local path
    device: str = "cpu"
    max_prompt_chars: int = 4096
    port: int = 8000
    pool_path: str | None = None  # optional word pool to pre-map at startup

    def __post_init__(self):
        if self.max_prompt_chars <= 0:
            raise ValueError("max_prompt_chars must be > 0")


class CandidateTokenizationError(ValueError):
    """A candidate string produced no tokens under the model's tokenizer."""

    def __init__(self, candidate: str):
        super().__init__(f"candidate produced no tokens: {candidate!r}")
        self.candidate = candidate


class ModelRuntime:
    """Wraps a causal LM; scores candidates by their first token's final-position logit.

    Forward passes are serialized with a lock so concurrent requests cannot
    interleave model state, and run without gradients or sampling.
    """

    def __init__(self, config: ServerConfig):
        self.config = config
        self.tokenizer = AutoTokenizer.from_pretrained(config.model)
        self.model = AutoModelForCausalLM.from_pretrained(config.model)
        self.model.to(config.device)
        self.model.eval()
        self._lock = threading.Lock()

    def first_token_id(self, candidate: str) -> int:
        ids = self.tokenizer(candidate, add_special_tokens=False)["input_ids"]
        if not ids:
            raise CandidateTokenizationError(candidate)
        return int(ids[0])

    def candidate_logits(self, prompt: str, candidates: list[str]) -> list[float]:
        token_ids = [self.first_token_id(c) for c in candidates]
        input_ids = self.tokenizer(prompt, return_tensors="pt")["input_ids"]
        if input_ids.shape[1] == 0:
            # empty prompts have no final position; fall back to BOS context
            bos = self.tokenizer.bos_token_id
            if bos is None:
                raise CandidateTokenizationError(prompt)
            input_ids = torch.tensor([[bos]])
        with self._lock, torch.no_grad():
            output = self.model(input_ids.to(self.config.device))
        final = output.logits[0, -1]
        return [float(final[tid]) for tid in token_ids]

    def token_id_map(self, words: list[str]) -> dict[str, int]:
        """First-token ids for a fixed word list, logged for byte-stability audits."""
        mapping = {}
        for word in words:
            try:
                mapping[word] = self.first_token_id(word)
            except CandidateTokenizationError:
                logger.warning("word %r has no first token; skipped from /info map", word)
        for word, tid in mapping.items():
            logger.info("first-token map: %r -> %d", word, tid)
        return mapping
