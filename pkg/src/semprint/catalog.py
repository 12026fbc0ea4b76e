"""Compositional probe prompts and the category vocabularies they resolve against.

A probe prompt is a template instantiation ``"A photo of <article>
<attributes...> <superordinate> <context>"``. The bundled default catalogue
ships 42 prompts over five superordinate categories; the article is stored
per prompt rather than derived from grammar so that catalogues reproduce
their source text byte for byte.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable

__all__ = [
    "CatalogueError",
    "CategoryVocabulary",
    "CompositionalPrompt",
    "PromptCatalogue",
    "build_default_catalogue",
    "load_catalogue",
    "save_catalogue",
    "render_prompt",
    "slugify",
]

_DEFAULT_RESOURCE = "default_catalogue.json"


class CatalogueError(ValueError):
    """Raised when a catalogue document violates its invariants.

    ``violations`` lists every problem found, not just the first one.
    """

    def __init__(self, violations: Iterable[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


def slugify(text: str) -> str:
    """Lowercase, non-alphanumerics collapsed to single underscores."""
    return re.sub(r"[^a-z0-9]+", "_", text.lower()).strip("_")


@dataclass(frozen=True)
class CategoryVocabulary:
    """Ordered subordinate labels for one superordinate category."""

    superordinate: str
    labels: tuple[str, ...]

    def __post_init__(self):
        if len(self.labels) < 2:
            raise CatalogueError(
                [f"vocabulary '{self.superordinate}' needs at least 2 labels"]
            )
        seen = set()
        for label in self.labels:
            key = label.strip().casefold()
            if key in seen:
                raise CatalogueError(
                    [f"vocabulary '{self.superordinate}' has duplicate label '{label}'"]
                )
            seen.add(key)
        object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def k(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class CompositionalPrompt:
    """One probe: attribute tokens, a superordinate, and a context phrase."""

    id: str
    attributes: tuple[str, ...]
    superordinate: str
    context: str = ""
    article: str = "a"
    rendered: str = field(default="")

    def __post_init__(self):
        object.__setattr__(self, "attributes", tuple(self.attributes))
        if not self.rendered:
            object.__setattr__(self, "rendered", render_prompt(self))


def render_prompt(prompt: CompositionalPrompt) -> str:
    """Deterministic probe text for ``prompt``.

    The article comes from the prompt record verbatim; no a/an heuristics.
    """
    if not prompt.attributes:
        raise CatalogueError([f"prompt '{prompt.id}' has an empty attribute list"])
    parts = ["A photo of", prompt.article, *prompt.attributes, prompt.superordinate]
    if prompt.context:
        parts.append(prompt.context)
    return " ".join(parts)


@dataclass(frozen=True)
class PromptCatalogue:
    prompts: tuple[CompositionalPrompt, ...]
    vocabularies: dict[str, CategoryVocabulary]

    def __post_init__(self):
        object.__setattr__(self, "prompts", tuple(self.prompts))
        violations = _validate(self.prompts, self.vocabularies)
        if violations:
            raise CatalogueError(violations)

    def prompt(self, prompt_id: str) -> CompositionalPrompt:
        for p in self.prompts:
            if p.id == prompt_id:
                return p
        raise KeyError(prompt_id)

    def vocabulary_for(self, prompt_id: str) -> CategoryVocabulary:
        return self.vocabularies[self.prompt(prompt_id).superordinate]

    def prompt_ids(self) -> list[str]:
        return [p.id for p in self.prompts]

    def counts_by_superordinate(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for p in self.prompts:
            counts[p.superordinate] = counts.get(p.superordinate, 0) + 1
        return counts


def _validate(
    prompts: Iterable[CompositionalPrompt],
    vocabularies: dict[str, CategoryVocabulary],
) -> list[str]:
    violations = []
    seen_ids: set[str] = set()
    for p in prompts:
        if p.id in seen_ids:
            violations.append(f"duplicate prompt id '{p.id}'")
        seen_ids.add(p.id)
        if p.superordinate not in vocabularies:
            violations.append(
                f"prompt '{p.id}' references superordinate '{p.superordinate}'"
                " with no vocabulary entry"
            )
        if not p.attributes:
            violations.append(f"prompt '{p.id}' has an empty attribute list")
        else:
            expected = render_prompt(p)
            if p.rendered != expected:
                violations.append(
                    f"prompt '{p.id}' rendered text {p.rendered!r} does not match"
                    f" its fields (expected {expected!r})"
                )
    for name, vocab in vocabularies.items():
        if vocab.superordinate != name:
            violations.append(
                f"vocabulary key '{name}' disagrees with its superordinate"
                f" '{vocab.superordinate}'"
            )
    return violations


def build_default_catalogue() -> PromptCatalogue:
    """The bundled 42-prompt catalogue (five superordinates, 9+9+6+9+9)."""
    with resources.files("semprint.data").joinpath(_DEFAULT_RESOURCE).open(
        "r", encoding="utf-8"
    ) as fh:
        return _parse_catalogue(json.load(fh), source="bundled default catalogue")


def load_catalogue(path: str | Path) -> PromptCatalogue:
    path = Path(path)
    if not path.exists():
        raise CatalogueError([f"catalogue file not found: {path}"])
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CatalogueError([f"catalogue file {path} is not valid JSON: {exc}"])
    return _parse_catalogue(doc, source=str(path))


def _parse_catalogue(doc: dict, source: str) -> PromptCatalogue:
    if not isinstance(doc, dict) or "prompts" not in doc or "vocabularies" not in doc:
        raise CatalogueError(
            [f"{source}: expected top-level keys 'vocabularies' and 'prompts'"]
        )
    vocabularies = {
        name: CategoryVocabulary(superordinate=name, labels=tuple(labels))
        for name, labels in doc["vocabularies"].items()
    }
    prompts = []
    violations = []
    for record in doc["prompts"]:
        try:
            prompts.append(
                CompositionalPrompt(
                    id=record["id"],
                    attributes=tuple(record["attributes"]),
                    superordinate=record["superordinate"],
                    context=record.get("context", ""),
                    article=record.get("article", "a"),
                    rendered=record.get("rendered", ""),
                )
            )
        except (KeyError, TypeError) as exc:
            violations.append(f"{source}: malformed prompt record ({exc})")
        except CatalogueError as exc:
            violations.extend(exc.violations)
    violations.extend(_validate(prompts, vocabularies))
    if violations:
        raise CatalogueError(violations)
    return PromptCatalogue(prompts=tuple(prompts), vocabularies=vocabularies)


def save_catalogue(catalogue: PromptCatalogue, path: str | Path) -> None:
    doc = {
        "vocabularies": {
            name: list(v.labels) for name, v in catalogue.vocabularies.items()
        },
        "prompts": [
            {
                "id": p.id,
                "article": p.article,
                "attributes": list(p.attributes),
                "superordinate": p.superordinate,
                "context": p.context,
                "rendered": p.rendered,
            }
            for p in catalogue.prompts
        ],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        json.dumps(doc, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )
