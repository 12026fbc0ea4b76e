"""Synthetic semantic-category generators.

Each simulated model carries, per prompt, a mean categorical distribution
and a Dirichlet concentration; sampling one "generation" draws a point on
the simplex around that mean. Fine-tuning mixes the mean toward a style
shift, attenuated by prompt rarity: the rarer the prompt composition, the
less the fine-tune moves it. This gives the pipeline a desk-scale world in
which lineage attribution has a known ground truth.

The simulator also implements the generation and classifier boundaries
directly (the "image" is a JSON payload holding the drawn vector), so the
whole probe pipeline can run offline.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .catalog import PromptCatalogue
from .classify import CategoricalSample, ClassificationError, ClassifierRequest
from .probe import Fingerprint, GeneratedImage, ProbeError

__all__ = [
    "SimModelSpec",
    "PromptLaw",
    "FineTuneConfig",
    "WorldSpecError",
    "make_lineage",
    "fine_tune",
    "draw_sample",
    "sample_fingerprint",
    "SimGenerationBackend",
    "SimClassifierBackend",
    "build_world",
    "save_model_spec",
    "load_model_spec",
]

SIM_MEDIA_TYPE = "application/json"
SIMPLEX_ATOL = 1e-9
_MEAN_FLOOR = 1e-12

DEFAULT_BASE_CONCENTRATION = 0.3
DEFAULT_KAPPA = 50.0
DEFAULT_COMMONNESS_BASE = 0.5
DEFAULT_RARITY_EXPONENT = 2.0


class WorldSpecError(ValueError):
    pass


@dataclass(frozen=True)
class PromptLaw:
    """Per-prompt generative law: mean on the simplex, concentration,
    rarity."""

    mean: tuple[float, ...]
    kappa: float
    rarity: float

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        if abs(float(mean.sum()) - 1.0) > SIMPLEX_ATOL or (mean < 0).any():
            raise WorldSpecError("prompt mean must lie on the simplex")
        if not self.kappa > 0:
            raise WorldSpecError("kappa must be positive")
        if not 0.0 <= self.rarity <= 1.0:
            raise WorldSpecError("rarity must be in [0, 1]")
        object.__setattr__(self, "mean", tuple(float(x) for x in mean))


@dataclass(frozen=True)
class SimModelSpec:
    model_id: str
    lineage_id: str
    prompts: dict[str, PromptLaw]


@dataclass(frozen=True)
class FineTuneConfig:
    """Fine-tuning as a rarity-attenuated mean shift.

    ``strength`` scales how far means move toward the style shift;
    ``rarity_exponent`` controls how fast that movement decays as prompts
    get rarer (weight = strength * (1 - rarity) ** rarity_exponent).
    """

    strength: float
    style_shift_seed: int
    rarity_exponent: float = DEFAULT_RARITY_EXPONENT

    def __post_init__(self):
        if not 0.0 <= self.strength <= 1.0:
            raise WorldSpecError("strength must be in [0, 1]")
        if self.rarity_exponent < 0:
            raise WorldSpecError("rarity_exponent must be >= 0")


def _hash64(*parts: str) -> int:
    h = hashlib.blake2b("\x1f".join(parts).encode("utf-8"), digest_size=8)
    return int.from_bytes(h.digest(), "big")


def _rng(seed: int, *parts: str) -> np.random.Generator:
    return np.random.default_rng([seed % 2**63, *(_hash64(p) for p in parts)])


def _floored_simplex(vec: np.ndarray) -> np.ndarray:
    vec = np.maximum(vec, _MEAN_FLOOR)
    return vec / vec.sum()


def make_lineage(
    seed: int,
    catalogue: PromptCatalogue,
    base_concentration: float = DEFAULT_BASE_CONCENTRATION,
    kappa: float = DEFAULT_KAPPA,
    commonness_base: float = DEFAULT_COMMONNESS_BASE,
    lineage_id: str = "lineage",
    model_id: str | None = None,
) -> SimModelSpec:
    """Draw a fresh base model: per-prompt means from a symmetric
    Dirichlet.

    Rarity grows with attribute count k: commonness = commonness_base**k,
    rarity = 1 - commonness. K per prompt comes from the catalogue's
    vocabulary sizes.
    """
    if base_concentration <= 0:
        raise WorldSpecError("base_concentration must be positive")
    if not 0.0 < commonness_base < 1.0:
        raise WorldSpecError("commonness_base must be in (0, 1)")
    prompts: dict[str, PromptLaw] = {}
    for prompt in catalogue.prompts:
        k_cats = catalogue.vocabularies[prompt.superordinate].k
        rng = _rng(seed, "lineage", lineage_id, prompt.id)
        mean = _floored_simplex(
            rng.dirichlet(np.full(k_cats, base_concentration))
        )
        rarity = 1.0 - commonness_base ** len(prompt.attributes)
        prompts[prompt.id] = PromptLaw(
            mean=tuple(mean), kappa=kappa, rarity=rarity
        )
    return SimModelSpec(
        model_id=model_id or f"{lineage_id}-base",
        lineage_id=lineage_id,
        prompts=prompts,
    )


def shift_weight(strength: float, rarity: float, exponent: float) -> float:
    """How far a fine-tune moves a prompt's mean: rarer prompts move less."""
    return strength * (1.0 - rarity) ** exponent


def mix_toward(mean: np.ndarray, shift: np.ndarray, weight: float) -> np.ndarray:
    mean = np.asarray(mean)
    if weight == 0.0:
        return mean
    mixed = (1.0 - weight) * mean + weight * np.asarray(shift)
    return mixed / mixed.sum()


def fine_tune(
    base: SimModelSpec, cfg: FineTuneConfig, model_id: str | None = None
) -> SimModelSpec:
    """Perturb a base model's means toward a style shift, least where
    prompts are rarest. Lineage and concentrations are preserved."""
    prompts: dict[str, PromptLaw] = {}
    for prompt_id, law in base.prompts.items():
        mean = np.asarray(law.mean)
        rng = _rng(cfg.style_shift_seed, "style-shift", prompt_id)
        shift = _floored_simplex(rng.dirichlet(np.ones(len(mean))))
        weight = shift_weight(cfg.strength, law.rarity, cfg.rarity_exponent)
        prompts[prompt_id] = PromptLaw(
            mean=tuple(mix_toward(mean, shift, weight)),
            kappa=law.kappa,
            rarity=law.rarity,
        )
    return SimModelSpec(
        model_id=model_id or f"{base.model_id}-ft",
        lineage_id=base.lineage_id,
        prompts=prompts,
    )


def draw_sample(spec: SimModelSpec, prompt_id: str, seed: int) -> np.ndarray:
    """One categorical vector from the model's law for this prompt.

    Pure function of (model_id, prompt_id, seed): the probe pipeline and
    direct sampling produce identical draws for identical seeds.
    """
    if prompt_id not in spec.prompts:
        raise KeyError(f"model {spec.model_id} has no law for prompt {prompt_id}")
    law = spec.prompts[prompt_id]
    rng = _rng(seed, "draw", spec.model_id, prompt_id)
    alpha = np.maximum(law.kappa * np.asarray(law.mean), 1e-10)
    return rng.dirichlet(alpha)


def sample_fingerprint(
    spec: SimModelSpec, prompt_id: str, n: int, seed: int
) -> Fingerprint:
    """N independent draws with consecutive seeds seed, seed+1, ..."""
    if n < 1:
        raise WorldSpecError("n must be >= 1")
    seeds = [seed + i for i in range(n)]
    samples = [
        CategoricalSample(
            probs=tuple(float(x) for x in draw_sample(spec, prompt_id, s))
        )
        for s in seeds
    ]
    return Fingerprint(
        model_id=spec.model_id,
        prompt_id=prompt_id,
        samples=tuple(samples),
        seeds=tuple(seeds),
    )


# --------------------------------------------------------------------------
# Boundary adapters: the simulator as generation + classification services


class SimGenerationBackend:
    """Generation boundary that emits the drawn vector as a JSON 'image'."""

    def __init__(self, spec: SimModelSpec, catalogue: PromptCatalogue):
        self.spec = spec
        self._by_rendered = {p.rendered: p.id for p in catalogue.prompts}

    def generate(
        self, prompt: str, seed: int, width: int, height: int
    ) -> GeneratedImage:
        prompt_id = self._by_rendered.get(prompt)
        if prompt_id is None:
            raise ProbeError(f"simulator has no prompt matching {prompt!r}")
        vec = draw_sample(self.spec, prompt_id, seed)
        payload = json.dumps({"probs": [float(x) for x in vec]})
        return GeneratedImage(
            data=payload.encode("utf-8"), media_type=SIM_MEDIA_TYPE
        )


class SimClassifierBackend:
    """Classifier boundary that decodes the simulator's JSON payloads."""

    def classify(self, request: ClassifierRequest) -> Sequence[float]:
        if request.media_type != SIM_MEDIA_TYPE:
            raise ClassificationError(
                f"simulator classifier cannot read media type {request.media_type}"
            )
        probs = json.loads(request.image.decode("utf-8"))["probs"]
        if len(probs) != len(request.labels):
            raise ClassificationError(
                f"payload has {len(probs)} categories for"
                f" {len(request.labels)} labels"
            )
        return probs


# --------------------------------------------------------------------------
# Worlds: a set of lineages with fine-tuned descendants


def build_world(
    world: dict, catalogue: PromptCatalogue
) -> list[SimModelSpec]:
    """Instantiate every model of a world description.

    The description lists lineage names and fine-tune configs applied to
    each lineage's base. All randomness derives from the world seed plus
    stable per-model hashes, so rebuilding is reproducible.
    """
    try:
        seed = int(world["seed"])
        lineages = list(world["lineages"])
    except (KeyError, TypeError, ValueError) as exc:
        raise WorldSpecError(f"world spec needs 'seed' and 'lineages': {exc}")
    if not lineages:
        raise WorldSpecError("world spec lists no lineages")
    base_concentration = float(
        world.get("base_concentration", DEFAULT_BASE_CONCENTRATION)
    )
    kappa = float(world.get("kappa", DEFAULT_KAPPA))
    commonness_base = float(
        world.get("commonness_base", DEFAULT_COMMONNESS_BASE)
    )
    fine_tunes = world.get("fine_tunes", [])

    specs: list[SimModelSpec] = []
    for lineage_id in lineages:
        base = make_lineage(
            seed=seed,
            catalogue=catalogue,
            base_concentration=base_concentration,
            kappa=kappa,
            commonness_base=commonness_base,
            lineage_id=str(lineage_id),
        )
        specs.append(base)
        for idx, ft in enumerate(fine_tunes):
            try:
                strength = float(ft["strength"])
            except (KeyError, TypeError, ValueError) as exc:
                raise WorldSpecError(f"fine-tune entry needs 'strength': {exc}")
            suffix = ft.get("suffix", f"ft{idx + 1}")
            style_seed = ft.get("style_shift_seed")
            if style_seed is None:
                style_seed = seed ^ _hash64("style", str(lineage_id), str(idx))
            cfg = FineTuneConfig(
                strength=strength,
                style_shift_seed=int(style_seed),
                rarity_exponent=float(
                    ft.get("rarity_exponent", DEFAULT_RARITY_EXPONENT)
                ),
            )
            specs.append(
                fine_tune(base, cfg, model_id=f"{lineage_id}-{suffix}")
            )
    ids = [s.model_id for s in specs]
    if len(set(ids)) != len(ids):
        raise WorldSpecError(f"world produces duplicate model ids: {ids}")
    return specs


def save_model_spec(spec: SimModelSpec, path: str | Path) -> None:
    doc = {
        "model_id": spec.model_id,
        "lineage_id": spec.lineage_id,
        "prompts": [
            {
                "prompt_id": pid,
                "mean": list(law.mean),
                "kappa": law.kappa,
                "rarity": law.rarity,
            }
            for pid, law in spec.prompts.items()
        ],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_model_spec(path: str | Path) -> SimModelSpec:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        prompts = {
            rec["prompt_id"]: PromptLaw(
                mean=tuple(rec["mean"]),
                kappa=float(rec["kappa"]),
                rarity=float(rec["rarity"]),
            )
            for rec in doc["prompts"]
        }
        return SimModelSpec(
            model_id=doc["model_id"],
            lineage_id=doc["lineage_id"],
            prompts=prompts,
        )
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise WorldSpecError(f"cannot load model spec {path}: {exc}")
