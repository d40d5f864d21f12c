"""Logit providers: a deterministic synthetic oracle, an HTTP client, and a disk cache.

A backend answers one question: given a prompt string and a list of candidate
word strings, what is the logit of each candidate's first token at the end of
the prompt? Candidates are sent verbatim (leading space included); the client
never tokenizes.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import requests

from .corpus import ClassWordPool, LabeledDataset, PromptTemplate, class_word
from .errors import BackendError, BatchError, DataError, PromptTooLongError

ENDPOINT_ENV_VAR = "LOGITSEP_ENDPOINT"

LogitTable = dict[str, float]


@dataclass(frozen=True)
class LogitQuery:
    prompt: str
    candidates: tuple[str, ...]

    def __post_init__(self):
        if not self.candidates:
            raise DataError("query has no candidates")
        if len(set(self.candidates)) != len(self.candidates):
            raise DataError("query candidates must be pairwise distinct")


class LogitBackend:
    """Interface shared by all logit providers."""

    name: str = "backend"
    max_prompt_chars: int | None = None

    def query(self, query: LogitQuery) -> LogitTable:
        raise NotImplementedError

    def check_budget(self, prompt: str) -> None:
        budget = self.max_prompt_chars
        if budget is not None and len(prompt) > budget:
            raise PromptTooLongError(len(prompt), budget)


def batch_query(
    backend: LogitBackend, queries: Sequence[LogitQuery], parallelism: int = 1
) -> list[LogitTable]:
    """Run queries with bounded concurrency; results align positionally.

    Result content is independent of completion order. The first failing
    query (by position) aborts the batch.
    """
    if parallelism < 1:
        raise DataError("parallelism must be >= 1")
    if not queries:
        return []
    if parallelism == 1:
        results = []
        for i, q in enumerate(queries):
            try:
                results.append(backend.query(q))
            except Exception as exc:
                raise BatchError(i, exc) from exc
        return results
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        futures = [pool.submit(backend.query, q) for q in queries]
        outcomes = []
        for fut in futures:
            try:
                outcomes.append((fut.result(), None))
            except Exception as exc:
                outcomes.append((None, exc))
    for i, (_, exc) in enumerate(outcomes):
        if exc is not None:
            raise BatchError(i, exc) from exc
    return [table for table, _ in outcomes]


# ---------------------------------------------------------------------------
# Synthetic oracle
# ---------------------------------------------------------------------------

@dataclass
class SyntheticModelSpec:
    """Planted-signal model: logits are a linear function of class affinity.

    ``affinity[sample_class][word_class]`` scales with the sample's strength;
    ``word_bias`` shifts a word uniformly across samples; ``noise_scale``
    adds hash-keyed jitter in [-noise_scale, +noise_scale].
    """

    affinity: dict[str, dict[str, float]]
    word_bias: dict[str, float] = field(default_factory=dict)
    sample_strength: dict[int, float] = field(default_factory=dict)
    noise_scale: float = 0.0
    seed: int = 0
    default_strength: float = 1.0

    def __post_init__(self):
        classes = list(self.affinity)
        for row_class, row in self.affinity.items():
            if set(row) != set(classes):
                raise DataError(f"affinity row {row_class!r} must cover every class")
        if self.noise_scale < 0:
            raise DataError("noise_scale must be >= 0")

    @property
    def classes(self) -> list[str]:
        return list(self.affinity)

    def canonical_json(self) -> str:
        payload = {
            "affinity": self.affinity,
            "word_bias": self.word_bias,
            "sample_strength": {str(k): v for k, v in sorted(self.sample_strength.items())},
            "noise_scale": self.noise_scale,
            "seed": self.seed,
            "default_strength": self.default_strength,
        }
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_file(cls, path: str | Path) -> "SyntheticModelSpec":
        path = Path(path)
        if not path.exists():
            raise DataError(f"synthetic spec file not found: {path}")
        raw = json.loads(path.read_text(encoding="utf-8"))
        return cls(
            affinity=raw["affinity"],
            word_bias=raw.get("word_bias", {}),
            sample_strength={int(k): float(v) for k, v in raw.get("sample_strength", {}).items()},
            noise_scale=float(raw.get("noise_scale", 0.0)),
            seed=int(raw.get("seed", 0)),
            default_strength=float(raw.get("default_strength", 1.0)),
        )


def _hash_noise(seed: int, sample_id: int, word: str) -> float:
    """Deterministic pseudo-random value in [-1, 1] keyed by (seed, sample, word)."""
    digest = hashlib.blake2b(
        f"{seed}\x00{sample_id}\x00{word}".encode("utf-8"), digest_size=8
    ).digest()
    raw = int.from_bytes(digest, "big")
    return raw / float(2**63) - 1.0


def synthetic_logit(
    spec: SyntheticModelSpec,
    sample_id: int,
    sample_class: str,
    word: str,
    word_class: str,
) -> float:
    if sample_class not in spec.affinity:
        raise BackendError(f"unknown sample class {sample_class!r}")
    if word_class not in spec.affinity:
        raise BackendError(f"unknown word class {word_class!r}")
    strength = spec.sample_strength.get(sample_id, spec.default_strength)
    value = spec.affinity[sample_class][word_class] * strength
    value += spec.word_bias.get(word, 0.0)
    if spec.noise_scale:
        value += _hash_noise(spec.seed, sample_id, word) * spec.noise_scale
    return value


class SyntheticBackend(LogitBackend):
    """Deterministic oracle that resolves prompts back to registered samples.

    The query text is recovered from the prompt as the substring between the
    last ``input_prefix`` occurrence and the trailing ``label_prefix``, so
    registered sample texts must not contain template substrings.

    ``sample_class_overrides`` / ``word_class_overrides`` let tests plant
    samples or words whose logit behavior belongs to a different class than
    their nominal one.
    """

    def __init__(
        self,
        spec: SyntheticModelSpec,
        datasets: Iterable[LabeledDataset],
        pool: ClassWordPool,
        template: PromptTemplate,
        sample_class_overrides: dict[int, str] | None = None,
        word_class_overrides: dict[str, str] | None = None,
        max_prompt_chars: int | None = None,
    ):
        self.spec = spec
        self.template = template
        self.max_prompt_chars = max_prompt_chars
        self.queries_issued = 0
        digest = hashlib.sha256(spec.canonical_json().encode("utf-8")).hexdigest()[:12]
        self.name = f"synthetic:{digest}"

        overrides = sample_class_overrides or {}
        self._samples: dict[str, tuple[int, str]] = {}
        for dataset in datasets:
            for ex in dataset:
                effective = overrides.get(ex.id, ex.label)
                known = self._samples.get(ex.text)
                if known is not None and known[1] != effective:
                    raise DataError(f"text registered twice with different classes: {ex.text!r}")
                if known is None:
                    self._samples[ex.text] = (ex.id, effective)

        self._word_classes = pool.word_class()
        for name in pool.classes:
            self._word_classes.setdefault(class_word(name), name)
        self._word_classes.update(word_class_overrides or {})

    def _resolve_query_text(self, prompt: str) -> str:
        tail = self.template.line_separator + self.template.label_prefix
        if not prompt.endswith(tail):
            raise BackendError("prompt does not end with the template's label prefix")
        body = prompt[: -len(tail)]
        start = body.rfind(self.template.input_prefix)
        if start < 0:
            raise BackendError("prompt has no input prefix")
        return body[start + len(self.template.input_prefix):]

    def query(self, query: LogitQuery) -> LogitTable:
        self.check_budget(query.prompt)
        self.queries_issued += 1
        text = self._resolve_query_text(query.prompt)
        try:
            sample_id, sample_class = self._samples[text]
        except KeyError:
            raise BackendError(f"query text not registered with the oracle: {text!r}") from None
        table: LogitTable = {}
        for cand in query.candidates:
            try:
                word_class = self._word_classes[cand]
            except KeyError:
                raise BackendError(f"candidate not registered with the oracle: {cand!r}") from None
            table[cand] = synthetic_logit(self.spec, sample_id, sample_class, cand, word_class)
        return table


# ---------------------------------------------------------------------------
# HTTP client
# ---------------------------------------------------------------------------

class HttpBackend(LogitBackend):
    """Client for the wire protocol: POST /logits and GET /info.

    Transport failures and 5xx responses are retried with exponential
    backoff; a 413 response becomes :class:`PromptTooLongError` carrying the
    server's budget.
    """

    def __init__(
        self,
        endpoint: str | None = None,
        timeout: float = 60.0,
        retries: int = 3,
        backoff: float = 0.5,
    ):
        endpoint = endpoint or os.environ.get(ENDPOINT_ENV_VAR)
        if not endpoint:
            raise BackendError(
                f"no endpoint given and {ENDPOINT_ENV_VAR} is not set"
            )
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self.queries_issued = 0
        self._session = requests.Session()
        self._info: dict | None = None

    def _request(self, method: str, path: str, payload: dict | None = None) -> requests.Response:
        url = self.endpoint + path
        last_exc: Exception | None = None
        for attempt in range(self.retries):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = self._session.request(method, url, json=payload, timeout=self.timeout)
            except (requests.ConnectionError, requests.Timeout) as exc:
                last_exc = exc
                continue
            if resp.status_code >= 500:
                last_exc = BackendError(f"server error {resp.status_code} from {url}")
                continue
            return resp
        raise BackendError(
            f"{url} unreachable after {self.retries} attempts: {last_exc}",
            attempts=self.retries,
        )

    def info(self) -> dict:
        if self._info is None:
            resp = self._request("GET", "/info")
            if resp.status_code != 200:
                raise BackendError(f"/info returned status {resp.status_code}")
            payload = resp.json()
            if "model" not in payload or "max_prompt_chars" not in payload:
                raise BackendError("/info response missing 'model' or 'max_prompt_chars'")
            self._info = payload
        return self._info

    @property
    def name(self) -> str:  # type: ignore[override]
        return f"http:{self.info()['model']}"

    @property
    def max_prompt_chars(self) -> int | None:  # type: ignore[override]
        return self.info()["max_prompt_chars"]

    def query(self, query: LogitQuery) -> LogitTable:
        self.check_budget(query.prompt)
        self.queries_issued += 1
        resp = self._request(
            "POST", "/logits", {"prompt": query.prompt, "candidates": list(query.candidates)}
        )
        if resp.status_code == 413:
            budget = resp.json().get("max_prompt_chars", self.max_prompt_chars or 0)
            raise PromptTooLongError(len(query.prompt), budget)
        if resp.status_code != 200:
            raise BackendError(f"/logits returned status {resp.status_code}: {resp.text[:200]}")
        payload = resp.json()
        logits = payload.get("logits")
        if not isinstance(logits, list) or len(logits) != len(query.candidates):
            raise BackendError("/logits response not aligned with candidates")
        table: LogitTable = {}
        for cand, value in zip(query.candidates, logits):
            value = float(value)
            if not math.isfinite(value):
                raise BackendError(f"non-finite logit for candidate {cand!r}")
            table[cand] = value
        return table


# ---------------------------------------------------------------------------
# Disk cache
# ---------------------------------------------------------------------------

def cache_key(backend_name: str, prompt: str, candidate: str) -> str:
    """256-bit content address of one (backend, prompt, candidate) logit."""
    blob = json.dumps([backend_name, prompt, candidate], ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class CachedBackend(LogitBackend):
    """Append-only JSONL cache in front of another backend.

    Hits never touch the inner backend; misses are queried candidate-by-prompt
    and appended under a lock, so identical reruns issue zero inner queries.
    """

    CACHE_FILE = "logits.jsonl"

    def __init__(self, inner: LogitBackend, cache_dir: str | Path):
        self.inner = inner
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self._path = self.cache_dir / self.CACHE_FILE
        self._lock = threading.Lock()
        self._table: dict[str, float] = {}
        self.hits = 0
        self.misses = 0
        if self._path.exists():
            with self._path.open(encoding="utf-8") as fh:
                for line in fh:
                    if not line.strip():
                        continue
                    record = json.loads(line)
                    self._table[record["key"]] = record["logit"]

    @property
    def name(self) -> str:  # type: ignore[override]
        return self.inner.name

    @property
    def max_prompt_chars(self) -> int | None:  # type: ignore[override]
        return self.inner.max_prompt_chars

    def stats(self) -> dict[str, int]:
        issued = getattr(self.inner, "queries_issued", None)
        return {"hits": self.hits, "misses": self.misses, "backend_queries": issued or 0}

    def query(self, query: LogitQuery) -> LogitTable:
        self.check_budget(query.prompt)
        name = self.name
        keys = {cand: cache_key(name, query.prompt, cand) for cand in query.candidates}
        with self._lock:
            missing = [cand for cand in query.candidates if keys[cand] not in self._table]
            self.hits += len(query.candidates) - len(missing)
            self.misses += len(missing)
        if missing:
            fresh = self.inner.query(LogitQuery(query.prompt, tuple(missing)))
            prompt_hash = hashlib.sha256(query.prompt.encode("utf-8")).hexdigest()
            with self._lock:
                with self._path.open("a", encoding="utf-8") as fh:
                    for cand in missing:
                        record = {
                            "key": keys[cand],
                            "prompt_hash": prompt_hash,
                            "candidate": cand,
                            "logit": fresh[cand],
                        }
                        fh.write(json.dumps(record, ensure_ascii=False) + "\n")
                        self._table[keys[cand]] = fresh[cand]
        with self._lock:
            return {cand: self._table[keys[cand]] for cand in query.candidates}
