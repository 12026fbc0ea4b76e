"""Probing protocol: generate N images per prompt, classify each, assemble
fingerprints.

Generation and classification run through pluggable boundaries so the same
orchestration drives a live API, a directory of pre-generated images, or the
synthetic simulator. Every completed sample is appended to a journal file,
which makes interrupted runs resumable without re-paying for generations.
Samples are keyed by (prompt, seed), so parallelism and resumption never
change the assembled output.
"""
from __future__ import annotations

import base64
import json
import threading
import time
from concurrent.futures import (
    ALL_COMPLETED,
    FIRST_EXCEPTION,
    ThreadPoolExecutor,
    wait,
)
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import requests

from .catalog import PromptCatalogue, slugify
from .classify import (
    CategoricalSample,
    ClassificationError,
    ClassifierBackend,
    ClassifierRequest,
    TransportError,
    classify_image,
)

__all__ = [
    "Fingerprint",
    "ProbePlan",
    "ProbeError",
    "StoreError",
    "GeneratedImage",
    "GenerationBackend",
    "HttpGenerationBackend",
    "DirectoryGenerationBackend",
    "run_probe",
    "save_fingerprints",
    "load_fingerprints",
    "seed_for",
]

# Per-prompt seed stride; keeps seed ranges of different prompts disjoint
# for any n_per_prompt below the stride.
SEED_STRIDE = 10_000


class ProbeError(RuntimeError):
    """A probe run aborted. The journal (if any) allows resumption."""

    def __init__(self, message: str, journal_path: Path | None = None):
        super().__init__(message)
        self.journal_path = journal_path


class StoreError(ValueError):
    """A fingerprint store failed to parse or violated an invariant."""


@dataclass(frozen=True)
class Fingerprint:
    """Uniform empirical measure over N categorical samples for one
    (model, prompt) pair."""

    model_id: str
    prompt_id: str
    samples: tuple[CategoricalSample, ...]
    seeds: tuple[int, ...]
    vocabulary: str = ""

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if len(self.samples) < 1:
            raise StoreError(f"fingerprint {self.model_id}/{self.prompt_id} is empty")
        if len(self.samples) != len(self.seeds):
            raise StoreError("samples and seeds must have equal length")
        if len(set(self.seeds)) != len(self.seeds):
            raise StoreError("seeds must be distinct")
        k = self.samples[0].k
        if any(s.k != k for s in self.samples):
            raise StoreError("all samples in a fingerprint must share one K")

    @property
    def n(self) -> int:
        return len(self.samples)

    @property
    def k(self) -> int:
        return self.samples[0].k


@dataclass(frozen=True)
class ProbePlan:
    model_id: str
    prompt_ids: tuple[str, ...]
    n_per_prompt: int = 30
    seed_base: int = 0
    parallelism: int = 1

    def __post_init__(self):
        object.__setattr__(self, "prompt_ids", tuple(self.prompt_ids))
        if self.n_per_prompt < 1:
            raise ValueError("n_per_prompt must be >= 1")
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")
        if self.n_per_prompt > SEED_STRIDE:
            raise ValueError(f"n_per_prompt cannot exceed {SEED_STRIDE}")


def seed_for(plan: ProbePlan, prompt_index: int, sample_index: int) -> int:
    """Seed for one sample: prompt-strided so seeds never repeat across
    prompts within a plan."""
    return plan.seed_base + SEED_STRIDE * prompt_index + sample_index


@dataclass(frozen=True)
class GeneratedImage:
    data: bytes
    media_type: str


class GenerationBackend(Protocol):
    def generate(
        self, prompt: str, seed: int, width: int, height: int
    ) -> GeneratedImage:
        ...


class HttpGenerationBackend:
    """POST /generate {prompt, seed, width, height} -> {image: base64,
    media_type}."""

    def __init__(
        self, endpoint: str, api_key: str | None = None, timeout: float = 120.0
    ):
        self.endpoint = endpoint.rstrip("/")
        self.api_key = api_key
        self.timeout = timeout

    def generate(
        self, prompt: str, seed: int, width: int, height: int
    ) -> GeneratedImage:
        headers = {}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        payload = {"prompt": prompt, "seed": seed, "width": width, "height": height}
        try:
            resp = requests.post(
                f"{self.endpoint}/generate",
                json=payload,
                headers=headers,
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise TransportError(f"generate request failed: {exc}") from exc
        if resp.status_code >= 500:
            raise TransportError(f"generation service error {resp.status_code}")
        if resp.status_code != 200:
            raise ProbeError(
                f"generation rejected: {resp.status_code} {resp.text[:200]}"
            )
        body = resp.json()
        return GeneratedImage(
            data=base64.b64decode(body["image"]),
            media_type=body.get("media_type", "image/png"),
        )


_MEDIA_TYPES = {
    ".png": "image/png",
    ".jpg": "image/jpeg",
    ".jpeg": "image/jpeg",
    ".webp": "image/webp",
}


class DirectoryGenerationBackend:
    """Serves pre-generated images from disk.

    Files are named ``<prompt_id>_<index>.<ext>`` where prompt_id is the
    slug of the prompt text and index is the sample index implied by the
    plan's seed schedule (``(seed - seed_base) % stride``).
    """

    def __init__(self, root: str | Path, seed_base: int = 0):
        self.root = Path(root)
        self.seed_base = seed_base

    def generate(
        self, prompt: str, seed: int, width: int, height: int
    ) -> GeneratedImage:
        index = (seed - self.seed_base) % SEED_STRIDE
        stem = f"{slugify(prompt)}_{index}"
        for ext, media in _MEDIA_TYPES.items():
            path = self.root / (stem + ext)
            if path.exists():
                return GeneratedImage(data=path.read_bytes(), media_type=media)
        raise ProbeError(f"no image file for {stem}.* under {self.root}")


# --------------------------------------------------------------------------
# Journal


class _Journal:
    """Append-only JSONL journal of completed samples."""

    def __init__(self, path: Path, header: dict):
        self.path = path
        self._lock = threading.Lock()
        self.completed: dict[tuple[str, int], list[float]] = {}
        if path.exists():
            self._load(header)
        else:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(
                json.dumps({"kind": "header", **header}) + "\n", encoding="utf-8"
            )

    def _load(self, header: dict):
        lines = self.path.read_text(encoding="utf-8").splitlines()
        if not lines:
            raise ProbeError(f"journal {self.path} is empty", self.path)
        head = json.loads(lines[0])
        for key, value in header.items():
            if head.get(key) != value:
                raise ProbeError(
                    f"journal {self.path} was written for a different run"
                    f" ({key}={head.get(key)!r}, expected {value!r})",
                    self.path,
                )
        for line in lines[1:]:
            if not line.strip():
                continue
            rec = json.loads(line)
            self.completed[(rec["prompt_id"], rec["seed"])] = rec["probs"]

    def record(self, prompt_id: str, seed: int, probs: Sequence[float]):
        line = json.dumps(
            {"kind": "sample", "prompt_id": prompt_id, "seed": seed,
             "probs": list(probs)}
        )
        with self._lock:
            try:
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(line + "\n")
                    fh.flush()
            except OSError as exc:
                raise ProbeError(f"checkpoint write failed: {exc}", self.path)
            self.completed[(prompt_id, seed)] = list(probs)


def _with_retries(fn, max_retries: int, backoff_base: float, on_retry=None):
    attempt = 0
    while True:
        try:
            return fn()
        except TransportError:
            if attempt >= max_retries:
                raise
            if on_retry is not None:
                on_retry()
            time.sleep(backoff_base * (2**attempt))
            attempt += 1


def run_probe(
    gen: GenerationBackend,
    cls: ClassifierBackend,
    catalogue: PromptCatalogue,
    plan: ProbePlan,
    journal_path: str | Path | None = None,
    max_retries: int = 3,
    backoff_base: float = 0.5,
    missing_tolerance: int = 0,
    width: int = 512,
    height: int = 512,
    stats: dict | None = None,
) -> dict[str, Fingerprint]:
    """Execute the probing protocol for one model.

    Returns prompt_id -> Fingerprint with exactly ``n_per_prompt`` samples
    per prompt (seeds follow the plan's schedule). Failures beyond
    ``missing_tolerance`` abort with a ProbeError; rerunning with the same
    journal path resumes from the completed samples. When ``stats`` is
    given, retry and generation counts are accumulated into it.
    """
    prompts = {pid: catalogue.prompt(pid) for pid in plan.prompt_ids}
    journal = None
    jpath = Path(journal_path) if journal_path is not None else None
    if jpath is not None:
        journal = _Journal(
            jpath,
            header={
                "model_id": plan.model_id,
                "n_per_prompt": plan.n_per_prompt,
                "seed_base": plan.seed_base,
            },
        )

    results: dict[tuple[str, int], CategoricalSample] = {}
    pending: list[tuple[str, int]] = []  # (prompt_id, seed)
    for j, pid in enumerate(plan.prompt_ids):
        for i in range(plan.n_per_prompt):
            seed = seed_for(plan, j, i)
            if journal is not None and (pid, seed) in journal.completed:
                results[(pid, seed)] = CategoricalSample(
                    probs=tuple(journal.completed[(pid, seed)])
                )
            else:
                pending.append((pid, seed))

    counters = {"retries": 0, "generated": 0}
    counter_lock = threading.Lock()

    def count(key: str):
        with counter_lock:
            counters[key] += 1

    def produce(pid: str, seed: int) -> CategoricalSample:
        prompt = prompts[pid]
        labels = catalogue.vocabularies[prompt.superordinate].labels
        image = _with_retries(
            lambda: gen.generate(prompt.rendered, seed, width, height),
            max_retries,
            backoff_base,
            on_retry=lambda: count("retries"),
        )
        count("generated")
        request = ClassifierRequest(
            image=image.data, media_type=image.media_type, labels=labels
        )
        sample = _with_retries(
            lambda: classify_image(cls, request),
            max_retries,
            backoff_base,
            on_retry=lambda: count("retries"),
        )
        if journal is not None:
            journal.record(pid, seed, sample.probs)
        return sample

    failures: list[str] = []
    if pending:
        # With zero tolerance any failure aborts the run, so stop
        # scheduling on the first one; with tolerance, run everything so
        # the missing count is exact.
        return_when = FIRST_EXCEPTION if missing_tolerance == 0 else ALL_COMPLETED
        with ThreadPoolExecutor(max_workers=plan.parallelism) as pool:
            futures = {
                pool.submit(produce, pid, seed): (pid, seed)
                for pid, seed in pending
            }
            _, not_done = wait(futures, return_when=return_when)
            for fut in not_done:
                fut.cancel()
            for fut, (pid, seed) in futures.items():
                if fut.cancelled():
                    continue
                try:
                    results[(pid, seed)] = fut.result()
                except (TransportError, ClassificationError, ProbeError) as exc:
                    failures.append(f"{pid} seed={seed}: {exc}")

    if stats is not None:
        stats.update(counters)
    expected = len(plan.prompt_ids) * plan.n_per_prompt
    missing = expected - len(results)
    if missing > missing_tolerance:
        raise ProbeError(
            f"{missing} of {expected} samples missing"
            + (f" ({failures[0]})" if failures else "")
            + (f"; journal retained at {jpath}" if jpath else ""),
            jpath,
        )

    fingerprints: dict[str, Fingerprint] = {}
    for j, pid in enumerate(plan.prompt_ids):
        samples, seeds = [], []
        for i in range(plan.n_per_prompt):
            seed = seed_for(plan, j, i)
            if (pid, seed) in results:
                samples.append(results[(pid, seed)])
                seeds.append(seed)
        fingerprints[pid] = Fingerprint(
            model_id=plan.model_id,
            prompt_id=pid,
            samples=tuple(samples),
            seeds=tuple(seeds),
            vocabulary=prompts[pid].superordinate,
        )
    return fingerprints


# --------------------------------------------------------------------------
# Store I/O


def save_fingerprints(
    fingerprints: Mapping[str, Fingerprint], path: str | Path
) -> None:
    """One file per model; probabilities keep full round-trip precision."""
    fps = list(fingerprints.values())
    if not fps:
        raise StoreError("cannot save an empty fingerprint map")
    model_ids = {fp.model_id for fp in fps}
    if len(model_ids) > 1:
        raise StoreError(f"fingerprints span multiple models: {sorted(model_ids)}")
    doc = {
        "model_id": fps[0].model_id,
        "prompts": [
            {
                "prompt_id": fp.prompt_id,
                "vocabulary": fp.vocabulary,
                "seeds": list(fp.seeds),
                "samples": [list(s.probs) for s in fp.samples],
            }
            for fp in fps
        ],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_fingerprints(path: str | Path) -> dict[str, Fingerprint]:
    path = Path(path)
    if not path.exists():
        raise StoreError(f"fingerprint store not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise StoreError(f"fingerprint store {path} is not valid JSON: {exc}")
    if "model_id" not in doc or "prompts" not in doc:
        raise StoreError(f"fingerprint store {path} missing model_id/prompts")
    out: dict[str, Fingerprint] = {}
    for rec in doc["prompts"]:
        try:
            fp = Fingerprint(
                model_id=doc["model_id"],
                prompt_id=rec["prompt_id"],
                samples=tuple(
                    CategoricalSample(probs=tuple(s)) for s in rec["samples"]
                ),
                seeds=tuple(rec["seeds"]),
                vocabulary=rec.get("vocabulary", ""),
            )
        except (KeyError, TypeError) as exc:
            raise StoreError(f"{path}: malformed prompt record ({exc})")
        except (ClassificationError, StoreError) as exc:
            raise StoreError(
                f"{path}: prompt '{rec.get('prompt_id')}' violates invariants: {exc}"
            )
        if fp.prompt_id in out:
            raise StoreError(f"{path}: duplicate prompt '{fp.prompt_id}'")
        out[fp.prompt_id] = fp
    return out
