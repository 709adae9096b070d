"""Text embedding backends behind one small interface.

Two backends: a deterministic offline backend for tests and reproducible
pipelines (keyed blake2b hash of the text expanded through a counter-based
Philox generator into pseudo-gaussian values), and a remote backend speaking
a minimal embed-over-HTTP contract (POST {texts: [...]} -> {vectors, dim}).

Vectors are float32 on disk and in memory; similarity math accumulates in
float64 downstream.
"""

from __future__ import annotations

import hashlib
import struct
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence, Union

import httpx
import numpy as np

from .errors import BackendTimeout, EmbeddingError, ValidationError

DEFAULT_DIM = 768
DEFAULT_TEST_SEED = 0x52414543  # arbitrary fixed 64-bit seed

BACKEND_TEST = "deterministic-test"
BACKEND_REMOTE = "remote"


@dataclass(frozen=True)
class EmbedderConfig:
    backend: str = BACKEND_TEST
    dim: int = DEFAULT_DIM
    normalize: bool = True
    seed: int = DEFAULT_TEST_SEED
    base_url: str = ""
    auth_token: str = ""
    timeout_s: float = 30.0
    max_in_flight: int = 8

    def __post_init__(self) -> None:
        if self.dim <= 0:
            raise ValidationError(f"embedding dim must be positive, got {self.dim}")


def _check_text(text: str, index: int | None = None) -> str:
    if not isinstance(text, str) or not text.strip():
        where = "" if index is None else f" at index {index}"
        raise ValidationError(f"cannot embed empty text{where}")
    return text


class DeterministicEmbedder:
    """Offline embedder: identical text always yields identical vectors.

    The text is hashed with a seed-keyed blake2b; the 128-bit digest keys a
    Philox counter-based generator that expands into `dim` standard-normal
    values. Identical across processes and platforms for a given seed.
    """

    def __init__(self, config: EmbedderConfig | None = None) -> None:
        self.config = config or EmbedderConfig()

    @property
    def dim(self) -> int:
        return self.config.dim

    def embed(self, text: str) -> np.ndarray:
        _check_text(text)
        key_bytes = hashlib.blake2b(
            text.encode("utf-8"),
            digest_size=16,
            key=struct.pack("<Q", self.config.seed & 0xFFFFFFFFFFFFFFFF),
        ).digest()
        key = np.frombuffer(key_bytes, dtype="<u8")
        rng = np.random.Generator(np.random.Philox(key=key))
        vec = rng.standard_normal(self.config.dim)
        if self.config.normalize:
            vec = vec / np.linalg.norm(vec)
        return vec.astype("<f4")

    def embed_batch(self, texts: Sequence[str]) -> np.ndarray:
        out = np.empty((len(texts), self.config.dim), dtype="<f4")
        for i, text in enumerate(texts):
            _check_text(text, index=i)
            out[i] = self.embed(text)
        return out


class RemoteEmbedder:
    """Embed-over-HTTP client: POST {texts} to the configured endpoint.

    Concurrency is bounded by a semaphore (max_in_flight); each request
    carries the configured timeout. A response whose dimension disagrees
    with the configured dim is an error, not silently accepted.
    """

    def __init__(self, config: EmbedderConfig) -> None:
        if not config.base_url:
            raise ValidationError("remote embedder requires a base_url")
        self.config = config
        self._slots = threading.BoundedSemaphore(config.max_in_flight)
        headers = {}
        if config.auth_token:
            headers["Authorization"] = f"Bearer {config.auth_token}"
        self._client = httpx.Client(timeout=config.timeout_s, headers=headers)

    @property
    def dim(self) -> int:
        return self.config.dim

    def embed(self, text: str) -> np.ndarray:
        return self.embed_batch([text])[0]

    def embed_batch(self, texts: Sequence[str]) -> np.ndarray:
        for i, text in enumerate(texts):
            _check_text(text, index=i)
        if not texts:
            return np.empty((0, self.config.dim), dtype="<f4")
        with self._slots:
            try:
                resp = self._client.post(self.config.base_url, json={"texts": list(texts)})
            except httpx.TimeoutException as exc:
                raise BackendTimeout(f"embedding endpoint timed out: {exc}") from exc
            except httpx.HTTPError as exc:
                raise EmbeddingError(f"embedding endpoint unreachable: {exc}") from exc
        if resp.status_code != 200:
            raise EmbeddingError(f"embedding endpoint returned HTTP {resp.status_code}")
        body = resp.json()
        vectors = np.asarray(body.get("vectors"), dtype="<f4")
        if vectors.ndim != 2 or vectors.shape != (len(texts), self.config.dim):
            raise EmbeddingError(
                f"embedding endpoint returned shape {vectors.shape}, "
                f"expected {(len(texts), self.config.dim)}"
            )
        if not np.all(np.isfinite(vectors)):
            raise EmbeddingError("embedding endpoint returned non-finite values")
        if self.config.normalize:
            norms = np.linalg.norm(vectors.astype("<f8"), axis=1, keepdims=True)
            if np.any(norms == 0):
                raise EmbeddingError("embedding endpoint returned a zero vector")
            vectors = (vectors / norms).astype("<f4")
        return vectors

    def close(self) -> None:
        self._client.close()


Embedder = Union[DeterministicEmbedder, RemoteEmbedder]


def make_embedder(config: EmbedderConfig) -> Embedder:
    if config.backend == BACKEND_TEST:
        return DeterministicEmbedder(config)
    if config.backend == BACKEND_REMOTE:
        return RemoteEmbedder(config)
    raise ValidationError(f"unknown embedder backend: {config.backend!r}")


def write_matrix(path: Union[str, Path], matrix: np.ndarray) -> None:
    """Write a row-major little-endian float32 matrix file."""
    np.ascontiguousarray(matrix, dtype="<f4").tofile(str(path))


def read_matrix(path: Union[str, Path], dim: int) -> np.ndarray:
    data = np.fromfile(str(path), dtype="<f4")
    if dim <= 0 or data.size % dim != 0:
        raise ValidationError(f"vector file {path} does not contain rows of dim {dim}")
    return data.reshape(-1, dim)
