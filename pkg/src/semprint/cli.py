"""Command-line entry point.

Subcommands: probe, attribute, heatmap, simulate, catalogue-validate.
All runs are driven by a JSON config file; simulator and offline backends
make every command reproducible from (config, seeds) alone.

Attribute exit codes: 0 = dominant match found, 10 = significant only,
20 = inconclusive, 2 = usage/input error.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .attribution import attribution_report, run_trials
from .catalog import CatalogueError, load_catalogue
from .classify import filter_unreliable_prompts
from .config import (
    ConfigError,
    RunConfig,
    load_config,
    make_classifier_backend,
    make_generation_backend,
)
from .metrics import (
    DegenerateColumnError,
    MetricError,
    average_matrices,
    distance_matrix,
    normalize_columns,
    write_matrix_csv,
    write_matrix_json,
)
from .probe import (
    ProbeError,
    ProbePlan,
    SEED_STRIDE,
    StoreError,
    load_fingerprints,
    run_probe,
    save_fingerprints,
)
from .report import (
    render_heatmap,
    render_posterior,
    write_attribution_csv,
    write_attribution_json,
    write_trials_csv,
)
from .simulate import WorldSpecError, build_world, sample_fingerprint, save_model_spec

EXIT_DOMINANT = 0
EXIT_SIGNIFICANT = 10
EXIT_INCONCLUSIVE = 20
EXIT_ERROR = 2


def _load_run_config(args) -> RunConfig:
    config = load_config(args.config)
    if getattr(args, "out", None):
        config.output_dir = args.out
    if getattr(args, "metric", None):
        config.metric = args.metric
    if getattr(args, "seed_base", None) is not None:
        config.seed_base = args.seed_base
    if getattr(args, "no_figures", False):
        config.figures = False
    return config


def cmd_probe(args) -> int:
    config = _load_run_config(args)
    catalogue = config.load_catalogue()
    plan = ProbePlan(
        model_id=args.model_id,
        prompt_ids=tuple(catalogue.prompt_ids()),
        n_per_prompt=config.n_per_prompt,
        seed_base=config.seed_base,
        parallelism=config.parallelism,
    )
    gen = make_generation_backend(config, args.model_id, catalogue)
    cls = make_classifier_backend(config)
    out = Path(config.output_dir)
    journal = out / "journal" / f"{args.model_id}.jsonl"
    total_images = len(plan.prompt_ids) * plan.n_per_prompt
    cost = total_images * config.unit_price
    stats: dict = {}
    try:
        fingerprints = run_probe(
            gen,
            cls,
            catalogue,
            plan,
            journal_path=journal,
            max_retries=config.max_retries,
            backoff_base=config.backoff_base,
            width=int(config.generation.get("width", 512)),
            height=int(config.generation.get("height", 512)),
            stats=stats,
        )
    except ProbeError as exc:
        print(f"probe failed: {exc}", file=sys.stderr)
        if exc.journal_path is not None:
            print(f"resumable journal retained: {exc.journal_path}", file=sys.stderr)
        return 1
    store_path = out / "stores" / f"{args.model_id}.json"
    save_fingerprints(fingerprints, store_path)
    n_samples = sum(fp.n for fp in fingerprints.values())
    print(
        f"probed {args.model_id}: {n_samples} samples across"
        f" {len(fingerprints)} prompts (n={plan.n_per_prompt}),"
        f" {stats.get('retries', 0)} retries"
    )
    print(
        f"estimated generation cost: ${cost:.2f}"
        f" ({total_images} images x ${config.unit_price:.2f})"
    )
    print(f"store written: {store_path}")
    return 0


def cmd_attribute(args) -> int:
    config = _load_run_config(args)
    suspect = load_fingerprints(args.suspect)
    base_stores = {}
    for path in args.base:
        store = load_fingerprints(path)
        model_id = next(iter(store.values())).model_id
        base_stores[model_id] = store
    if len(base_stores) < 2:
        print("need at least 2 base stores", file=sys.stderr)
        return EXIT_ERROR
    suspect_id = next(iter(suspect.values())).model_id

    suspect_ids = set(suspect.keys())
    for model_id, store in base_stores.items():
        if set(store.keys()) != suspect_ids:
            print(
                f"store mismatch: base '{model_id}' covers different prompts"
                " than the suspect",
                file=sys.stderr,
            )
            return EXIT_ERROR
        for pid, fp in store.items():
            if fp.vocabulary != suspect[pid].vocabulary:
                print(
                    f"store mismatch: vocabulary differs on prompt '{pid}'"
                    f" between suspect and '{model_id}'",
                    file=sys.stderr,
                )
                return EXIT_ERROR

    retained, filter_report = filter_unreliable_prompts(
        suspect, threshold_fraction=config.entropy_threshold_fraction
    )
    for dropped in filter_report.dropped:
        print(
            f"dropped unreliable prompt {dropped.prompt_id}"
            f" (mean entropy {dropped.mean_entropy:.4f}"
            f" > {config.entropy_threshold_fraction:.2f} * ln K"
            f" = {config.entropy_threshold_fraction * dropped.max_entropy:.4f})"
        )
    prompt_ids = [pid for pid in suspect.keys() if pid in retained]
    if not prompt_ids:
        print("entropy filtering dropped every prompt", file=sys.stderr)
        return EXIT_ERROR

    trials = run_trials(
        suspect, base_stores, metric=config.metric, prompt_ids=prompt_ids
    )
    rows = attribution_report(
        suspect_id,
        trials,
        base_ids=sorted(base_stores.keys()),
        alpha0=config.alpha0,
        beta0=config.beta0,
    )

    out = Path(config.output_dir)
    write_trials_csv(trials, sorted(base_stores.keys()), out / "trials.csv")
    write_attribution_csv(rows, out / "report.csv")
    write_attribution_json(
        suspect_id, rows, filter_report, config.metric, out / "report.json"
    )
    if config.figures:
        render_posterior(
            rows, out / "report.png", title=f"attribution of {suspect_id}"
        )

    best = max(rows, key=lambda r: r.mean)
    print(
        f"attribution of {suspect_id} over T={len(trials)} trials"
        f" (metric={config.metric}):"
    )
    for r in rows:
        marks = "".join(
            [" dominant" if r.dominant else "",
             " significant" if r.significant else "",
             " below-chance" if r.below_chance else ""]
        )
        print(
            f"  {r.base}: s={r.s} mean={r.mean:.3f}"
            f" ci=[{r.ci_low:.3f}, {r.ci_high:.3f}]{marks}"
        )
    if best.dominant:
        print(f"verdict: {best.base} is the dominant source lineage")
        return EXIT_DOMINANT
    if best.significant:
        print(f"verdict: {best.base} is significant but not dominant")
        return EXIT_SIGNIFICANT
    print("verdict: inconclusive")
    return EXIT_INCONCLUSIVE


def cmd_heatmap(args) -> int:
    config = _load_run_config(args)
    if len(args.store) < 2:
        print("need at least 2 stores", file=sys.stderr)
        return EXIT_ERROR
    stores = {}
    for path in args.store:
        store = load_fingerprints(path)
        model_id = next(iter(store.values())).model_id
        stores[model_id] = store
    ids = list(stores.keys())
    base_ids = config.base_models or ids
    missing = [b for b in base_ids if b not in stores]
    if missing:
        print(f"base models without stores: {missing}", file=sys.stderr)
        return EXIT_ERROR

    prompt_ids = list(next(iter(stores.values())).keys())
    for model_id, store in stores.items():
        if set(store.keys()) != set(prompt_ids):
            print(
                f"store mismatch: '{model_id}' covers different prompts",
                file=sys.stderr,
            )
            return EXIT_ERROR

    out = Path(config.output_dir) / "heatmap"
    normalized = []
    for pid in prompt_ids:
        mat = distance_matrix(
            {mid: stores[mid][pid] for mid in ids}, metric=config.metric, ids=ids
        )
        try:
            norm = normalize_columns(mat, base_ids)
        except DegenerateColumnError as exc:
            print(f"prompt '{pid}': {exc}", file=sys.stderr)
            return EXIT_ERROR
        write_matrix_csv(norm, out / f"{pid}.csv")
        normalized.append(norm)

    avg = average_matrices(normalized)
    write_matrix_csv(avg, out / "average.csv")
    write_matrix_json(avg, out / "average.json")
    if config.figures:
        render_heatmap(
            avg,
            out / "average.png",
            title=f"mean column-normalized {config.metric} distance",
        )
    print(
        f"wrote {len(prompt_ids)} per-prompt matrices + 1 average to {out}"
    )
    return 0


def cmd_simulate(args) -> int:
    config = _load_run_config(args)
    catalogue = config.load_catalogue()
    world = json.loads(Path(args.world).read_text(encoding="utf-8"))
    specs = build_world(world, catalogue)
    out = Path(config.output_dir)
    prompt_ids = catalogue.prompt_ids()
    for spec in specs:
        fingerprints = {}
        for j, pid in enumerate(prompt_ids):
            fp = sample_fingerprint(
                spec,
                pid,
                n=config.n_per_prompt,
                seed=config.seed_base + SEED_STRIDE * j,
            )
            # stores carry the vocabulary names for cross-store checks
            fingerprints[pid] = replace(
                fp, vocabulary=catalogue.prompt(pid).superordinate
            )
        save_fingerprints(fingerprints, out / "stores" / f"{spec.model_id}.json")
        save_model_spec(spec, out / "specs" / f"{spec.model_id}.json")
    print(f"simulated {len(specs)} model stores under {out / 'stores'}")
    return 0


def cmd_catalogue_validate(args) -> int:
    try:
        catalogue = load_catalogue(args.path)
    except CatalogueError as exc:
        print(f"catalogue invalid ({len(exc.violations)} violations):")
        for violation in exc.violations:
            print(f"  - {violation}")
        return 1
    counts = catalogue.counts_by_superordinate()
    print(
        f"catalogue OK: {len(catalogue.prompts)} prompts,"
        f" {len(catalogue.vocabularies)} vocabularies"
        f" ({', '.join(f'{k}={v}' for k, v in counts.items())})"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="semprint",
        description="Black-box lineage attribution for text-to-image models",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, metric=True):
        p.add_argument("--config", required=True, help="run config JSON")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--seed-base", type=int, dest="seed_base")
        p.add_argument("--no-figures", action="store_true", dest="no_figures")
        if metric:
            p.add_argument("--metric", choices=["w2", "jsd"])

    p = sub.add_parser("probe", help="probe one model and store fingerprints")
    common(p, metric=False)
    p.add_argument("--model-id", required=True, dest="model_id")
    p.set_defaults(fn=cmd_probe)

    p = sub.add_parser("attribute", help="attribute a suspect to base lineages")
    common(p)
    p.add_argument("--suspect", required=True, help="suspect fingerprint store")
    p.add_argument(
        "--base", action="append", required=True, help="base store (repeatable)"
    )
    p.set_defaults(fn=cmd_attribute)

    p = sub.add_parser("heatmap", help="emit normalized distance matrices")
    common(p)
    p.add_argument(
        "--store", action="append", required=True, help="model store (repeatable)"
    )
    p.set_defaults(fn=cmd_heatmap)

    p = sub.add_parser("simulate", help="write stores for a synthetic world")
    common(p, metric=False)
    p.add_argument("--world", required=True, help="world spec JSON")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("catalogue-validate", help="validate a catalogue document")
    p.add_argument("path")
    p.set_defaults(fn=cmd_catalogue_validate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, CatalogueError, StoreError, MetricError,
            WorldSpecError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
