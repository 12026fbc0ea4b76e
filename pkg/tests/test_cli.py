from __future__ import annotations

import csv
import json
from pathlib import Path

import pytest

from semprint.cli import main
from semprint.probe import load_fingerprints


def write_json(path: Path, doc: dict) -> Path:
    path.write_text(json.dumps(doc, indent=1))
    return path


@pytest.fixture()
def world_file(tmp_path):
    return write_json(
        tmp_path / "world.json",
        {
            "seed": 99,
            "lineages": ["A", "B"],
            "fine_tunes": [{"strength": 0.2}, {"strength": 0.0, "suffix": "s0"}],
        },
    )


@pytest.fixture()
def sim_config(tmp_path, world_file):
    return write_json(
        tmp_path / "config.json",
        {
            "output_dir": str(tmp_path / "out"),
            "generation": {"kind": "simulator", "world": str(world_file)},
            "classifier": {"kind": "simulator"},
            "plan": {"n_per_prompt": 5, "seed_base": 0, "parallelism": 2},
            "base_models": ["A-base", "B-base"],
        },
    )


def test_simulate_writes_all_stores(tmp_path, world_file, sim_config):
    assert main(["simulate", "--config", str(sim_config), "--world",
                 str(world_file)]) == 0
    stores = sorted((tmp_path / "out" / "stores").glob("*.json"))
    assert len(stores) == 6  # 2 lineages x (base + 2 fine-tunes)
    names = {p.stem for p in stores}
    assert names == {"A-base", "A-ft1", "A-s0", "B-base", "B-ft1", "B-s0"}


def test_simulate_rerun_byte_identical(tmp_path, world_file, sim_config):
    main(["simulate", "--config", str(sim_config), "--world", str(world_file)])
    first = {
        p.name: p.read_bytes()
        for p in (tmp_path / "out" / "stores").glob("*.json")
    }
    main(["simulate", "--config", str(sim_config), "--world", str(world_file)])
    second = {
        p.name: p.read_bytes()
        for p in (tmp_path / "out" / "stores").glob("*.json")
    }
    assert first == second


def test_simulate_six_lineage_world(tmp_path):
    world = write_json(
        tmp_path / "big_world.json",
        {
            "seed": 5,
            "lineages": [f"L{i}" for i in range(6)],
            "fine_tunes": [{"strength": 0.2}, {"strength": 0.4}],
        },
    )
    config = write_json(
        tmp_path / "cfg.json",
        {
            "output_dir": str(tmp_path / "out"),
            "plan": {"n_per_prompt": 2},
        },
    )
    assert main(["simulate", "--config", str(config), "--world",
                 str(world)]) == 0
    assert len(list((tmp_path / "out" / "stores").glob("*.json"))) == 18


def test_probe_simulator_counts_and_cost(tmp_path, sim_config, capsys):
    code = main(["probe", "--config", str(sim_config), "--model-id", "A-base"])
    assert code == 0
    out = capsys.readouterr().out
    assert "210 samples" in out  # 42 prompts x 5
    assert "$8.40" in out  # 210 x $0.04
    store = load_fingerprints(tmp_path / "out" / "stores" / "A-base.json")
    assert len(store) == 42
    assert sum(fp.n for fp in store.values()) == 210


def test_probe_matches_simulate_stores(tmp_path, world_file, sim_config):
    # the probe pipeline and direct sampling share one seed schedule
    main(["simulate", "--config", str(sim_config), "--world", str(world_file)])
    sampled = (tmp_path / "out" / "stores" / "A-base.json").read_bytes()
    (tmp_path / "out" / "stores" / "A-base.json").unlink()
    main(["probe", "--config", str(sim_config), "--model-id", "A-base"])
    probed = (tmp_path / "out" / "stores" / "A-base.json").read_bytes()
    assert probed == sampled


def test_probe_unreachable_endpoint(tmp_path, capsys):
    config = write_json(
        tmp_path / "cfg.json",
        {
            "output_dir": str(tmp_path / "out"),
            "generation": {"kind": "http", "endpoint": "http://127.0.0.1:9"},
            "classifier": {"kind": "stub"},
            "plan": {"n_per_prompt": 1, "parallelism": 1},
            "backoff_base": 0.0,
        },
    )
    code = main(["probe", "--config", str(config), "--model-id", "X"])
    assert code != 0
    journal = tmp_path / "out" / "journal" / "X.jsonl"
    assert journal.exists()
    assert "resumable journal" in capsys.readouterr().err


def _simulate(tmp_path, sim_config, world_file):
    main(["simulate", "--config", str(sim_config), "--world", str(world_file)])
    return tmp_path / "out" / "stores"


def test_attribute_fine_tune_dominant(tmp_path, sim_config, world_file, capsys):
    stores = _simulate(tmp_path, sim_config, world_file)
    code = main(
        [
            "attribute",
            "--config", str(sim_config),
            "--suspect", str(stores / "A-ft1.json"),
            "--base", str(stores / "A-base.json"),
            "--base", str(stores / "B-base.json"),
        ]
    )
    assert code == 0
    out = capsys.readouterr().out
    assert "A-base is the dominant source lineage" in out
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    row = next(r for r in report["bases"] if r["base"] == "A-base")
    assert row["dominant"] is True
    assert (tmp_path / "out" / "trials.csv").exists()
    assert (tmp_path / "out" / "report.csv").exists()
    assert (tmp_path / "out" / "report.png").exists()


def test_attribute_suspect_copy_of_base(tmp_path, sim_config, world_file):
    stores = _simulate(tmp_path, sim_config, world_file)
    code = main(
        [
            "attribute",
            "--config", str(sim_config),
            "--suspect", str(stores / "A-base.json"),
            "--base", str(stores / "A-base.json"),
            "--base", str(stores / "B-base.json"),
        ]
    )
    assert code == 0
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    t = report["trials"]
    row = next(r for r in report["bases"] if r["base"] == "A-base")
    assert row["s"] == t
    assert row["mean"] == pytest.approx((t + 1) / (t + 2))


def test_attribute_jsd_metric_column(tmp_path, sim_config, world_file):
    stores = _simulate(tmp_path, sim_config, world_file)
    code = main(
        [
            "attribute",
            "--config", str(sim_config),
            "--metric", "jsd",
            "--suspect", str(stores / "A-ft1.json"),
            "--base", str(stores / "A-base.json"),
            "--base", str(stores / "B-base.json"),
        ]
    )
    assert code == 0
    with (tmp_path / "out" / "trials.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert all(r["metric"] == "jsd" for r in rows)
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["metric"] == "jsd"


def test_attribute_store_mismatch(tmp_path, sim_config, world_file):
    stores = _simulate(tmp_path, sim_config, world_file)
    # corrupt one base store to cover fewer prompts
    doc = json.loads((stores / "B-base.json").read_text())
    doc["prompts"] = doc["prompts"][:10]
    write_json(stores / "B-short.json", doc)
    code = main(
        [
            "attribute",
            "--config", str(sim_config),
            "--suspect", str(stores / "A-ft1.json"),
            "--base", str(stores / "A-base.json"),
            "--base", str(stores / "B-short.json"),
        ]
    )
    assert code == 2


def test_heatmap_emits_per_prompt_and_average(tmp_path, sim_config,
                                              world_file, capsys):
    stores = _simulate(tmp_path, sim_config, world_file)
    args = ["heatmap", "--config", str(sim_config)]
    for store in sorted(stores.glob("*.json")):
        args += ["--store", str(store)]
    assert main(args) == 0
    out_dir = tmp_path / "out" / "heatmap"
    csvs = list(out_dir.glob("*.csv"))
    assert len(csvs) == 42 + 1
    assert (out_dir / "average.csv").exists()
    assert (out_dir / "average.json").exists()
    assert (out_dir / "average.png").exists()
    # zero diagonal in every emitted matrix
    for path in csvs:
        with path.open() as fh:
            rows = list(csv.reader(fh))
        ids = rows[0][1:]
        for i, row in enumerate(rows[1:]):
            assert float(row[1 + i]) == 0.0
            assert row[0] == ids[i]


def test_heatmap_identical_stores_degenerate(tmp_path, sim_config, world_file,
                                             capsys):
    stores = _simulate(tmp_path, sim_config, world_file)
    # two copies of the same fingerprints: zero distance everywhere
    doc = json.loads((stores / "A-base.json").read_text())
    doc["model_id"] = "A-copy"
    write_json(stores / "A-copy.json", doc)
    config = json.loads(Path(sim_config).read_text())
    config["base_models"] = ["A-base", "A-copy"]
    cfg2 = write_json(tmp_path / "cfg2.json", config)
    code = main(
        [
            "heatmap",
            "--config", str(cfg2),
            "--store", str(stores / "A-base.json"),
            "--store", str(stores / "A-copy.json"),
        ]
    )
    assert code == 2
    assert "zero max distance" in capsys.readouterr().err


def test_catalogue_validate_ok(tmp_path, default_catalogue, capsys):
    from semprint.catalog import save_catalogue

    path = tmp_path / "cat.json"
    save_catalogue(default_catalogue, path)
    assert main(["catalogue-validate", str(path)]) == 0
    assert "catalogue OK: 42 prompts" in capsys.readouterr().out


def test_catalogue_validate_duplicate_id(tmp_path, default_catalogue, capsys):
    from semprint.catalog import save_catalogue

    path = tmp_path / "cat.json"
    save_catalogue(default_catalogue, path)
    doc = json.loads(path.read_text())
    doc["prompts"].append(dict(doc["prompts"][0]))
    path.write_text(json.dumps(doc))
    assert main(["catalogue-validate", str(path)]) == 1
    out = capsys.readouterr().out
    assert "duplicate" in out
    assert doc["prompts"][0]["id"] in out


def test_zero_strength_fine_tune_close_to_base(tmp_path, sim_config,
                                               world_file):
    # an s=0 fine-tune differs from its base only by sampling noise: its
    # distance to the base matches the distance between two independent
    # resamples of the same law
    from semprint.metrics import wasserstein2
    from semprint.simulate import build_world, sample_fingerprint

    stores = _simulate(tmp_path, sim_config, world_file)
    base = load_fingerprints(stores / "A-base.json")
    s0 = load_fingerprints(stores / "A-s0.json")
    world = json.loads(world_file.read_text())
    from semprint.catalog import build_default_catalogue

    catalogue = build_default_catalogue()
    spec = next(
        s for s in build_world(world, catalogue) if s.model_id == "A-base"
    )
    ratios = []
    for j, pid in enumerate(list(base.keys())[:10]):
        d_ft = wasserstein2(s0[pid], base[pid])
        resample_a = sample_fingerprint(spec, pid, 5, seed=900_000 + j * 50)
        resample_b = sample_fingerprint(spec, pid, 5, seed=950_000 + j * 50)
        d_noise = wasserstein2(resample_a, resample_b)
        ratios.append(d_ft / d_noise)
    # same law on both sides: ratios hover around 1, far below lineage
    # separation (which is >> 2 in this world)
    assert 0.3 < sorted(ratios)[len(ratios) // 2] < 2.0
