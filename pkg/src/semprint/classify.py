"""Zero-shot classification boundary and entropy-based reliability filtering.

A classifier backend maps (image bytes, label list) to a probability vector
in label order. Backends are pluggable: an HTTP client for a live service,
a deterministic stub, and a record/replay pair for offline fixtures. The
probe pipeline may call ``classify_image`` from several threads at once, so
backends must either be thread-safe or be wrapped in ``SerializingClassifier``.
"""
from __future__ import annotations

import base64
import hashlib
import json
import math
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Mapping, Protocol, Sequence

import numpy as np
import requests

if TYPE_CHECKING:
    from .probe import Fingerprint

__all__ = [
    "CategoricalSample",
    "ClassifierRequest",
    "ClassifierBackend",
    "ClassificationError",
    "TransportError",
    "HttpClassifierBackend",
    "StubClassifierBackend",
    "RecordingClassifierBackend",
    "ReplayClassifierBackend",
    "SerializingClassifier",
    "classify_image",
    "entropy",
    "filter_unreliable_prompts",
    "FilterReport",
]

SUM_TOLERANCE = 1e-6
RENORM_TRIGGER = 1e-9


class ClassificationError(RuntimeError):
    """Backend returned something that cannot be a categorical sample."""


class TransportError(RuntimeError):
    """Transient transport failure; the caller may retry."""


@dataclass(frozen=True)
class CategoricalSample:
    """A point on the probability simplex: one classified image."""

    probs: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "probs", tuple(float(p) for p in self.probs))
        if any(p < 0.0 for p in self.probs):
            raise ClassificationError("negative probability entry")
        total = math.fsum(self.probs)
        if abs(total - 1.0) > SUM_TOLERANCE:
            raise ClassificationError(
                f"probabilities sum to {total!r}, outside 1 +/- {SUM_TOLERANCE}"
            )

    @property
    def k(self) -> int:
        return len(self.probs)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.probs, dtype=float)


@dataclass(frozen=True)
class ClassifierRequest:
    image: bytes
    media_type: str
    labels: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        if not self.labels:
            raise ClassificationError("label list must be nonempty")


class ClassifierBackend(Protocol):
    def classify(self, request: ClassifierRequest) -> Sequence[float]:
        """Probability vector over ``request.labels``, in label order."""
        ...


def classify_image(
    backend: ClassifierBackend, request: ClassifierRequest
) -> CategoricalSample:
    """Run one classification and validate the result.

    Sum drift within 1e-9 of 1 is passed through untouched; drift between
    1e-9 and 1e-6 is renormalized; anything worse is a fatal backend error,
    as is a vector of the wrong length or with negative entries.
    """
    raw = backend.classify(request)
    probs = [float(p) for p in raw]
    if len(probs) != len(request.labels):
        raise ClassificationError(
            f"backend returned {len(probs)} probabilities for"
            f" {len(request.labels)} labels"
        )
    if any(p < 0.0 for p in probs):
        raise ClassificationError("backend returned a negative probability")
    total = math.fsum(probs)
    drift = abs(total - 1.0)
    if drift > SUM_TOLERANCE:
        raise ClassificationError(
            f"backend probabilities sum to {total!r}, outside tolerance"
        )
    if drift > RENORM_TRIGGER:
        probs = [p / total for p in probs]
    return CategoricalSample(probs=tuple(probs))


def entropy(sample: CategoricalSample) -> float:
    """Shannon entropy in nats, with 0*ln(0) taken as 0."""
    return -math.fsum(p * math.log(p) for p in sample.probs if p > 0.0)


@dataclass(frozen=True)
class DroppedPrompt:
    prompt_id: str
    mean_entropy: float
    max_entropy: float


@dataclass(frozen=True)
class FilterReport:
    threshold_fraction: float
    retained: tuple[str, ...]
    dropped: tuple[DroppedPrompt, ...]


def filter_unreliable_prompts(
    fingerprints: Mapping[str, "Fingerprint"],
    threshold_fraction: float = 0.9,
) -> tuple[set[str], FilterReport]:
    """Drop prompts whose samples are too uniform to classify reliably.

    A prompt is dropped when the mean sample entropy across its fingerprint
    exceeds ``threshold_fraction * ln(K)`` for that prompt's vocabulary size.
    """
    if not 0.0 < threshold_fraction <= 1.0:
        raise ValueError("threshold_fraction must be in (0, 1]")
    retained: list[str] = []
    dropped: list[DroppedPrompt] = []
    for prompt_id, fp in fingerprints.items():
        if not fp.samples:
            raise ValueError(f"fingerprint for prompt '{prompt_id}' is empty")
        k = fp.samples[0].k
        mean_ent = math.fsum(entropy(s) for s in fp.samples) / len(fp.samples)
        limit = threshold_fraction * math.log(k)
        if mean_ent > limit:
            dropped.append(DroppedPrompt(prompt_id, mean_ent, math.log(k)))
        else:
            retained.append(prompt_id)
    report = FilterReport(
        threshold_fraction=threshold_fraction,
        retained=tuple(retained),
        dropped=tuple(dropped),
    )
    return set(retained), report


# --------------------------------------------------------------------------
# Backends


class HttpClassifierBackend:
    """POST /classify {image: base64, media_type, labels} -> {probs}."""

    def __init__(self, endpoint: str, timeout: float = 60.0):
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout

    def classify(self, request: ClassifierRequest) -> Sequence[float]:
        payload = {
            "image": base64.b64encode(request.image).decode("ascii"),
            "media_type": request.media_type,
            "labels": list(request.labels),
        }
        try:
            resp = requests.post(
                f"{self.endpoint}/classify", json=payload, timeout=self.timeout
            )
        except requests.RequestException as exc:
            raise TransportError(f"classify request failed: {exc}") from exc
        if resp.status_code >= 500:
            raise TransportError(f"classifier service error {resp.status_code}")
        if resp.status_code != 200:
            raise ClassificationError(
                f"classifier rejected request: {resp.status_code} {resp.text[:200]}"
            )
        body = resp.json()
        if "probs" not in body:
            raise ClassificationError("classifier response missing 'probs'")
        return body["probs"]


def _softmax(logits: Sequence[float]) -> list[float]:
    arr = np.asarray(logits, dtype=float)
    arr = arr - arr.max()
    ex = np.exp(arr)
    return list(ex / ex.sum())


class StubClassifierBackend:
    """Deterministic offline classifier.

    With fixed ``logits`` it always returns their softmax. Otherwise each
    label's logit is derived from a keyed hash of (seed, image, label), so
    identical requests always classify identically.
    """

    def __init__(self, logits: Sequence[float] | None = None, seed: int = 0):
        self.logits = list(logits) if logits is not None else None
        self.seed = seed

    def classify(self, request: ClassifierRequest) -> Sequence[float]:
        if self.logits is not None:
            if len(self.logits) != len(request.labels):
                raise ClassificationError(
                    "stub logits length does not match label count"
                )
            return _softmax(self.logits)
        logits = []
        for label in request.labels:
            h = hashlib.blake2b(
                request.image + label.encode("utf-8"),
                key=str(self.seed).encode("ascii"),
                digest_size=8,
            ).digest()
            logits.append(int.from_bytes(h, "big") / 2**64 * 4.0)
        return _softmax(logits)


def _request_key(request: ClassifierRequest) -> str:
    h = hashlib.sha256()
    h.update(request.image)
    h.update(request.media_type.encode("utf-8"))
    h.update(json.dumps(list(request.labels)).encode("utf-8"))
    return h.hexdigest()


class RecordingClassifierBackend:
    """Wraps a live backend and records every response to a fixture file."""

    def __init__(self, inner: ClassifierBackend, fixture_path: str | Path):
        self.inner = inner
        self.fixture_path = Path(fixture_path)
        self._records: dict[str, list[float]] = {}
        if self.fixture_path.exists():
            self._records = json.loads(self.fixture_path.read_text(encoding="utf-8"))

    def classify(self, request: ClassifierRequest) -> Sequence[float]:
        probs = [float(p) for p in self.inner.classify(request)]
        self._records[_request_key(request)] = probs
        self.fixture_path.write_text(
            json.dumps(self._records, indent=1), encoding="utf-8"
        )
        return probs


class ReplayClassifierBackend:
    """Serves previously recorded responses; unknown requests are errors."""

    def __init__(self, fixture_path: str | Path):
        self._records: dict[str, list[float]] = json.loads(
            Path(fixture_path).read_text(encoding="utf-8")
        )

    def classify(self, request: ClassifierRequest) -> Sequence[float]:
        key = _request_key(request)
        if key not in self._records:
            raise ClassificationError(f"no recorded response for request {key[:12]}")
        return self._records[key]


class SerializingClassifier:
    """Adapter that serializes access to a non-thread-safe backend."""

    def __init__(self, inner: ClassifierBackend):
        self.inner = inner
        self._lock = threading.Lock()

    def classify(self, request: ClassifierRequest) -> Sequence[float]:
        with self._lock:
            return self.inner.classify(request)
