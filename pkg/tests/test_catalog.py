from __future__ import annotations

import json

import pytest

from semprint.catalog import (
    CatalogueError,
    CategoryVocabulary,
    CompositionalPrompt,
    build_default_catalogue,
    load_catalogue,
    render_prompt,
    save_catalogue,
    slugify,
)

# The bundled probe set, frozen byte-for-byte (including the stored "an"
# articles of the bird group).
EXPECTED_RENDERED = [
    "A photo of a savory baked good on a dimmed studio",
    "A photo of a savory baked good on a dark wood surface",
    "A photo of a savory baked good against a brick wall",
    "A photo of a cheesy baked good on a dimmed studio",
    "A photo of a cheesy baked good on a dark wood surface",
    "A photo of a cheesy baked good against a brick wall",
    "A photo of a sweet baked good on a dimmed studio",
    "A photo of a sweet baked good on a dark wood surface",
    "A photo of a sweet baked good against a brick wall",
    "A photo of a dangerous animal in a grassland",
    "A photo of a dangerous animal in a forest",
    "A photo of a dangerous animal in a dimmed studio",
    "A photo of a wild animal in a grassland",
    "A photo of a wild animal in a forest",
    "A photo of a wild animal in a dimmed studio",
    "A photo of a peaceful animal in a grassland",
    "A photo of a peaceful animal in a forest",
    "A photo of a peaceful animal in a dimmed studio",
    "A photo of a vibrant single flower on a pot",
    "A photo of a vibrant single flower in a dimmed studio",
    "A photo of a vibrant single flower on a vase",
    "A photo of a tropical single flower on a pot",
    "A photo of a tropical single flower in a dimmed studio",
    "A photo of a tropical single flower on a vase",
    "A photo of an peaceful bird on a grass",
    "A photo of an peaceful bird on a savana",
    "A photo of an peaceful bird in a dimmed studio",
    "A photo of an dangerous bird on a grass",
    "A photo of an dangerous bird on a savana",
    "A photo of an dangerous bird in a dimmed studio",
    "A photo of an flightless bird on a grass",
    "A photo of an flightless bird on a savana",
    "A photo of an flightless bird in a dimmed studio",
    "A photo of a sweet single fruit on a dish",
    "A photo of a sweet single fruit on a wooden floor",
    "A photo of a sweet single fruit on a dimmed studio",
    "A photo of a frozen single fruit on a dish",
    "A photo of a frozen single fruit on a wooden floor",
    "A photo of a frozen single fruit on a dimmed studio",
    "A photo of a savory single fruit on a dish",
    "A photo of a savory single fruit on a wooden floor",
    "A photo of a savory single fruit on a dimmed studio",
]


def test_default_catalogue_counts(default_catalogue):
    assert len(default_catalogue.prompts) == 42
    counts = default_catalogue.counts_by_superordinate()
    assert counts == {
        "baked good": 9,
        "animal": 9,
        "flower": 6,
        "bird": 9,
        "fruit": 9,
    }


def test_default_catalogue_renders_byte_exact(default_catalogue):
    assert [p.rendered for p in default_catalogue.prompts] == EXPECTED_RENDERED


def test_default_catalogue_contains_expected_probe(default_catalogue):
    renders = [p.rendered for p in default_catalogue.prompts]
    assert "A photo of a cheesy baked good on a dimmed studio" in renders


def test_fruit_vocabulary(default_catalogue):
    labels = default_catalogue.vocabularies["fruit"].labels
    assert labels == (
        "Apple", "Nectarine", "Grapefruit", "Lime", "Coconut", "Honeydew",
        "Others",
    )
    assert "Honeydew" in labels


def test_prompt_ids_are_slugs(default_catalogue):
    for p in default_catalogue.prompts:
        assert p.id == slugify(p.rendered)
    assert (
        default_catalogue.prompts[3].id
        == "a_photo_of_a_cheesy_baked_good_on_a_dimmed_studio"
    )


def test_render_prompt_examples():
    p = CompositionalPrompt(
        id="x1", attributes=("dangerous",), superordinate="animal",
        context="in a forest",
    )
    assert render_prompt(p) == "A photo of a dangerous animal in a forest"

    p = CompositionalPrompt(
        id="x2", attributes=("x",), superordinate="thing", context=""
    )
    assert render_prompt(p) == "A photo of a x thing"

    p = CompositionalPrompt(
        id="x3", attributes=("flightless",), superordinate="bird",
        context="on a grass", article="an",
    )
    assert render_prompt(p) == "A photo of an flightless bird on a grass"


def test_render_prompt_deterministic():
    p = CompositionalPrompt(
        id="x", attributes=("sweet", "single"), superordinate="fruit",
        context="on a dish",
    )
    first = render_prompt(p)
    assert all(render_prompt(p) == first for _ in range(5))
    assert p.rendered == first


def test_render_prompt_empty_attributes_rejected():
    with pytest.raises(CatalogueError):
        CompositionalPrompt(
            id="bad", attributes=(), superordinate="animal", context=""
        )


def test_round_trip(tmp_path, default_catalogue):
    path = tmp_path / "catalogue.json"
    save_catalogue(default_catalogue, path)
    loaded = load_catalogue(path)
    assert loaded == default_catalogue
    # serialize-load-serialize is stable
    path2 = tmp_path / "again.json"
    save_catalogue(loaded, path2)
    assert path.read_text() == path2.read_text()


def test_bundled_default_loads_identically(tmp_path, default_catalogue):
    # the build function is itself a load of the bundled document
    assert build_default_catalogue() == default_catalogue


def _default_doc():
    from importlib import resources

    with resources.files("semprint.data").joinpath(
        "default_catalogue.json"
    ).open() as fh:
        return json.load(fh)


def test_duplicate_prompt_id_error(tmp_path):
    doc = _default_doc()
    doc["prompts"].append(dict(doc["prompts"][0]))
    path = tmp_path / "dup.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(CatalogueError) as err:
        load_catalogue(path)
    assert doc["prompts"][0]["id"] in str(err.value)


def test_missing_vocabulary_error(tmp_path):
    doc = _default_doc()
    del doc["vocabularies"]["bird"]
    path = tmp_path / "novocab.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(CatalogueError) as err:
        load_catalogue(path)
    assert "bird" in str(err.value)


def test_validation_lists_every_violation(tmp_path):
    doc = _default_doc()
    del doc["vocabularies"]["bird"]
    doc["prompts"].append(dict(doc["prompts"][0]))
    path = tmp_path / "multi.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(CatalogueError) as err:
        load_catalogue(path)
    violations = err.value.violations
    assert any("bird" in v for v in violations)
    assert any("duplicate" in v for v in violations)


def test_missing_file_error(tmp_path):
    with pytest.raises(CatalogueError):
        load_catalogue(tmp_path / "nope.json")


def test_parse_error(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(CatalogueError):
        load_catalogue(path)


def test_rendered_field_must_match(tmp_path):
    doc = _default_doc()
    doc["prompts"][0]["rendered"] = "A photo of something else"
    path = tmp_path / "tampered.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(CatalogueError):
        load_catalogue(path)


def test_vocabulary_invariants():
    with pytest.raises(CatalogueError):
        CategoryVocabulary(superordinate="t", labels=("only",))
    with pytest.raises(CatalogueError):
        CategoryVocabulary(superordinate="t", labels=("A", " a "))
