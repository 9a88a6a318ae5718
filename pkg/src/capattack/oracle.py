"""Oracles: the only window the attacker has into the victim model.

Two families share one calling convention (``generate(image) -> str``,
``embed(text) -> vector``, plus ``heatmap`` where supported):

* deterministic built-in toys (quadrant captioner, hashing embedder) for
  desk-scale runs and tests, plus the fixture images/heatmaps/lexicon the
  test suite and demos are built around;
* :class:`BridgeClient`, an HTTP client speaking the model-bridge wire
  protocol, for attacking real models.

All oracles are assumed deterministic per input: the engine caches fitness
and captions and never re-queries a parent. Every oracle owns an
:class:`OracleStats` counter with atomic updates.
"""

from __future__ import annotations

import base64
import logging
import threading
import time
from dataclasses import dataclass

import numpy as np
import requests

from .image import as_heatmap, as_image, encode_png
from .metrics import SynonymLexicon, tokenize

log = logging.getLogger(__name__)

EMBED_DIM = 64

_FNV_OFFSET = 14695981039346656037
_FNV_PRIME = 1099511628211
_UINT64_MASK = (1 << 64) - 1


class OracleError(RuntimeError):
    """Base class for oracle failures."""


class OracleConnectionError(OracleError):
    """Transport-level failure (connection refused, timeout); retried."""


class OracleProtocolError(OracleError):
    """The bridge answered with a non-200 status."""


class OracleSchemaError(OracleError):
    """The bridge answered 200 but the body violates the wire schema."""


class EmbeddingDimensionError(OracleSchemaError):
    """Embedding dimension changed mid-run."""


class OracleStats:
    """Monotone per-run query counters with atomic updates."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.generate_queries = 0
        self.embed_queries = 0
        self.heatmap_queries = 0

    def count_generate(self) -> None:
        with self._lock:
            self.generate_queries += 1

    def count_embed(self) -> None:
        with self._lock:
            self.embed_queries += 1

    def count_heatmap(self) -> None:
        with self._lock:
            self.heatmap_queries += 1

    def snapshot(self) -> dict:
        with self._lock:
            return {
                "generate_queries": self.generate_queries,
                "embed_queries": self.embed_queries,
                "heatmap_queries": self.heatmap_queries,
            }


def fnv1a64(data: bytes) -> int:
    """FNV-1a 64-bit hash with the standard offset basis and prime, pinned so
    toy embeddings are reproducible across implementations."""
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _UINT64_MASK
    return h


class QuadrantCaptioner:
    """Deterministic toy image-to-text model.

    Splits the image into 2x2 quadrants (odd dimensions give the extra
    row/column to the second half) and describes each by its dominant
    channel (red/green/blue, ties in that order) and brightness (mean of
    the three channel means, >= 128 is "bright"). The comma tokens in the
    caption are space-padded so tokenization drops them cleanly.
    """

    def __init__(self) -> None:
        self.stats = OracleStats()

    def generate(self, image) -> str:
        img = as_image(image)
        h, w = img.shape[:2]
        if h < 2 or w < 2:
            raise ValueError(f"image must be at least 2x2 pixels, got {h}x{w}")
        phrases = []
        for rows in (slice(0, h // 2), slice(h // 2, h)):
            for cols in (slice(0, w // 2), slice(w // 2, w)):
                means = img[rows, cols].reshape(-1, 3).mean(axis=0)
                color = ("red", "green", "blue")[int(np.argmax(means))]
                tone = "bright" if float(means.mean()) >= 128.0 else "dark"
                phrases.append(f"{tone} {color} square")
        self.stats.count_generate()
        return "a photo of a {} , a {} , a {} and a {}".format(*phrases)

    __call__ = generate


class HashingTextEmbedder:
    """Deterministic toy text encoder: a 64-dim hashed bag of words.

    Each token adds 1.0 at index fnv1a64(token) % 64; the vector is then
    L2-normalized. Texts with no tokens embed to the zero vector.
    """

    dim = EMBED_DIM

    def __init__(self) -> None:
        self.stats = OracleStats()

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float64)
        for token in tokenize(text):
            vec[fnv1a64(token.encode("utf-8")) % self.dim] += 1.0
        norm = float(np.linalg.norm(vec))
        if norm > 0.0:
            vec /= norm
        self.stats.count_embed()
        return vec

    __call__ = embed


def margin_image(width: int = 32, height: int = 32, margin: float = 5.0) -> np.ndarray:
    """Fixture image whose top-left quadrant sits `margin` intensity units
    from the red/blue decision boundary of the toy captioner.

    Quadrant 0 is (25 + margin, 0, 25); the other quadrants are a solid
    (200, 0, 0), far from any boundary. The toy caption is four "dark red
    square" phrases; pushing quadrant 0's blue mean above its red mean
    flips exactly the first color word.
    """
    if not 0 < margin <= 230:
        raise ValueError(f"margin must be in (0, 230], got {margin}")
    img = np.zeros((height, width, 3), dtype=np.float64)
    img[:, :, 0] = 200.0
    img[: height // 2, : width // 2, 0] = 25.0 + margin
    img[: height // 2, : width // 2, 2] = 25.0
    return img


def quadrant_heatmap(width: int, height: int, hot: float = 1.0, cold: float = 0.05) -> np.ndarray:
    """Fixture attention heatmap: `hot` on the top-left quadrant, `cold` elsewhere."""
    hm = np.full((height, width), cold, dtype=np.float32)
    hm[: height // 2, : width // 2] = hot
    return as_heatmap(hm)


def toy_lexicon() -> SynonymLexicon:
    """Synonym lexicon covering the toy captioner's closed vocabulary."""
    rows = [
        ("photo", "noun", "photograph.n.01"),
        ("photograph", "noun", "photograph.n.01"),
        ("picture", "noun", "photograph.n.01"),
        ("square", "noun", "square.n.01"),
        ("red", "adjective", "red.a.01"),
        ("crimson", "adjective", "red.a.01"),
        ("green", "adjective", "green.a.01"),
        ("blue", "adjective", "blue.a.01"),
        ("bright", "adjective", "bright.a.01"),
        ("dark", "adjective", "dark.a.01"),
        ("a", "other", "a.x.01"),
        ("of", "other", "of.x.01"),
        ("and", "other", "and.x.01"),
    ]
    return SynonymLexicon.from_rows(rows)


class EchoOracle:
    """Test double: returns a fixed caption regardless of the image."""

    def __init__(self, caption: str):
        self.caption = caption
        self.stats = OracleStats()

    def generate(self, image) -> str:
        as_image(image)
        self.stats.count_generate()
        return self.caption

    __call__ = generate


class BridgeClient:
    """HTTP client for the model-bridge wire protocol.

    Transport failures are retried up to `retries` times with exponential
    backoff; protocol and schema violations are not retried. The embedding
    dimension is pinned to the first response of the run and drift raises
    :class:`EmbeddingDimensionError`. Counters increment exactly once per
    successful call.
    """

    def __init__(
        self,
        base_url: str,
        timeout: float = 60.0,
        retries: int = 3,
        backoff: float = 0.5,
        session: requests.Session | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self.stats = OracleStats()
        self._session = session or requests.Session()
        self._embed_dim: int | None = None

    def _request(self, method: str, path: str, payload: dict | None = None) -> dict:
        url = f"{self.base_url}{path}"
        last_exc: Exception | None = None
        for attempt in range(self.retries):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = self._session.request(method, url, json=payload, timeout=self.timeout)
            except (requests.ConnectionError, requests.Timeout) as exc:
                last_exc = exc
                continue
            if resp.status_code != 200:
                raise OracleProtocolError(
                    f"{method} {url} returned {resp.status_code}: {resp.text[:200]}"
                )
            try:
                body = resp.json()
            except ValueError as exc:
                raise OracleSchemaError(f"{method} {url} returned non-JSON body") from exc
            if not isinstance(body, dict):
                raise OracleSchemaError(f"{method} {url} returned {type(body).__name__}, expected object")
            return body
        raise OracleConnectionError(
            f"{method} {url} unreachable after {self.retries} attempts: {last_exc}"
        )

    def health(self) -> dict:
        body = self._request("GET", "/health")
        if body.get("status") != "ok" or not isinstance(body.get("embed_dim"), int):
            raise OracleSchemaError(f"/health returned malformed body: {body}")
        return body

    def generate(self, image) -> str:
        png = encode_png(image)
        body = self._request(
            "POST", "/generate", {"image_png_b64": base64.b64encode(png).decode("ascii")}
        )
        text = body.get("text")
        if not isinstance(text, str):
            raise OracleSchemaError(f"/generate returned malformed body: {body}")
        self.stats.count_generate()
        return text

    def embed(self, text: str) -> np.ndarray:
        body = self._request("POST", "/embed", {"text": text})
        values = body.get("embedding")
        if not isinstance(values, list) or not values or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in values
        ):
            raise OracleSchemaError(f"/embed returned malformed body for text {text!r}")
        vec = np.asarray(values, dtype=np.float64)
        if not np.all(np.isfinite(vec)):
            raise OracleSchemaError(f"/embed returned non-finite values for text {text!r}")
        if self._embed_dim is None:
            self._embed_dim = vec.size
        elif vec.size != self._embed_dim:
            raise EmbeddingDimensionError(
                f"embedding dimension drifted from {self._embed_dim} to {vec.size}"
            )
        self.stats.count_embed()
        return vec

    def heatmap(self, image, target_text: str) -> np.ndarray:
        png = encode_png(image)
        body = self._request(
            "POST",
            "/heatmap",
            {"image_png_b64": base64.b64encode(png).decode("ascii"), "target_text": target_text},
        )
        width = body.get("width")
        height = body.get("height")
        values = body.get("values")
        if not isinstance(width, int) or not isinstance(height, int) or not isinstance(values, list):
            raise OracleSchemaError(f"/heatmap returned malformed body (keys {sorted(body)})")
        if width <= 0 or height <= 0 or len(values) != width * height:
            raise OracleSchemaError(
                f"/heatmap size mismatch: {width}x{height} with {len(values)} values"
            )
        arr = np.asarray(values, dtype=np.float32).reshape(height, width)
        try:
            hm = as_heatmap(arr)
        except ValueError as exc:
            raise OracleSchemaError(f"/heatmap values violate the contract: {exc}") from exc
        self.stats.count_heatmap()
        return hm

    __call__ = generate
