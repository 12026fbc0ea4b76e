"""Run configuration: one JSON file drives every command.

Credentials are never stored in the file; backend entries name environment
variables instead (``api_key_env``) and the value is read at run time.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .catalog import PromptCatalogue, build_default_catalogue, load_catalogue
from .classify import (
    HttpClassifierBackend,
    ReplayClassifierBackend,
    StubClassifierBackend,
)
from .probe import DirectoryGenerationBackend, HttpGenerationBackend
from .simulate import (
    SimClassifierBackend,
    SimGenerationBackend,
    build_world,
    load_model_spec,
)

__all__ = ["ConfigError", "RunConfig", "load_config"]


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    catalogue: str | None = None
    output_dir: str = "out"
    generation: dict = field(default_factory=lambda: {"kind": "simulator"})
    classifier: dict = field(default_factory=lambda: {"kind": "simulator"})
    n_per_prompt: int = 30
    seed_base: int = 0
    parallelism: int = 1
    metric: str = "w2"
    entropy_threshold_fraction: float = 0.9
    alpha0: float = 1.0
    beta0: float = 1.0
    unit_price: float = 0.04
    figures: bool = True
    base_models: list[str] = field(default_factory=list)
    max_retries: int = 3
    backoff_base: float = 0.5

    def __post_init__(self):
        if self.n_per_prompt < 1:
            raise ConfigError("n_per_prompt must be >= 1")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")
        if self.metric not in ("w2", "jsd"):
            raise ConfigError("metric must be 'w2' or 'jsd'")
        if not 0.0 < self.entropy_threshold_fraction <= 1.0:
            raise ConfigError("entropy_threshold_fraction must be in (0, 1]")
        if self.unit_price < 0:
            raise ConfigError("unit_price must be nonnegative")

    def load_catalogue(self) -> PromptCatalogue:
        if self.catalogue is None:
            return build_default_catalogue()
        return load_catalogue(self.catalogue)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}")
    plan = doc.pop("plan", {})
    prior = doc.pop("prior", {})
    kwargs = dict(doc)
    for key in ("n_per_prompt", "seed_base", "parallelism"):
        if key in plan:
            kwargs[key] = plan[key]
    if "alpha0" in prior:
        kwargs["alpha0"] = prior["alpha0"]
    if "beta0" in prior:
        kwargs["beta0"] = prior["beta0"]
    unknown = set(kwargs) - set(RunConfig.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return RunConfig(**kwargs)


def _env_value(entry: dict, key: str) -> str | None:
    env_name = entry.get(key)
    if not env_name:
        return None
    value = os.environ.get(env_name)
    if value is None:
        raise ConfigError(f"environment variable {env_name} is not set")
    return value


def make_generation_backend(
    config: RunConfig, model_id: str, catalogue: PromptCatalogue
):
    entry = config.generation
    kind = entry.get("kind", "simulator")
    if kind == "simulator":
        spec = _resolve_sim_spec(entry, model_id, catalogue)
        return SimGenerationBackend(spec, catalogue)
    if kind == "http":
        if "endpoint" not in entry:
            raise ConfigError("http generation backend needs 'endpoint'")
        return HttpGenerationBackend(
            entry["endpoint"], api_key=_env_value(entry, "api_key_env")
        )
    if kind == "directory":
        if "root" not in entry:
            raise ConfigError("directory generation backend needs 'root'")
        return DirectoryGenerationBackend(entry["root"], seed_base=config.seed_base)
    raise ConfigError(f"unknown generation backend kind '{kind}'")


def _resolve_sim_spec(entry: dict, model_id: str, catalogue: PromptCatalogue):
    if "spec" in entry:
        spec = load_model_spec(entry["spec"])
        if spec.model_id != model_id:
            raise ConfigError(
                f"spec file is for model '{spec.model_id}', not '{model_id}'"
            )
        return spec
    if "world" in entry:
        world = json.loads(Path(entry["world"]).read_text(encoding="utf-8"))
        for spec in build_world(world, catalogue):
            if spec.model_id == model_id:
                return spec
        raise ConfigError(f"world has no model '{model_id}'")
    raise ConfigError("simulator generation backend needs 'spec' or 'world'")


def make_classifier_backend(config: RunConfig):
    entry = config.classifier
    kind = entry.get("kind", "simulator")
    if kind == "simulator":
        return SimClassifierBackend()
    if kind == "stub":
        return StubClassifierBackend(
            logits=entry.get("logits"), seed=int(entry.get("seed", 0))
        )
    if kind == "http":
        if "endpoint" not in entry:
            raise ConfigError("http classifier backend needs 'endpoint'")
        return HttpClassifierBackend(entry["endpoint"])
    if kind == "replay":
        if "fixture" not in entry:
            raise ConfigError("replay classifier backend needs 'fixture'")
        return ReplayClassifierBackend(entry["fixture"])
    raise ConfigError(f"unknown classifier backend kind '{kind}'")
