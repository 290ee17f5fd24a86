"""Command-line entry point: ``polyrec <command> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import torch

from .benchmark import compare_sparsity, entropy_probe, scaling_table
from .checkpoint import load_checkpoint
from .config import (
    Settings,
    describe_keys,
    dump_config_text,
    load_profiler_settings,
    load_settings,
    read_config_file,
    resolve_values,
)
from .dataio import BEHAVIORS_FILE, latest_histories, parse_behaviors, split_impressions
from .exceptions import EXIT_OK, EXIT_USAGE, NumericalError, PolyrecError, UsageError
from .exporters import export_to_csv, export_to_excel
from .featurize import DataBundle, Featurizer, load_data_dir
from .models import BehaviorRecord, EvalReport
from .profiler import (
    SUMMARIES_FILE,
    StubSummaryBackend,
    SummaryCache,
    make_backend,
    profile_histories,
    read_summaries,
    summarize_users,
)
from .recommender import PolyRecommender, build_model
from .synthetic import generate_synthetic
from .textprep import Vocabulary
from .trainer import (
    CHECKPOINT_FILE,
    GRADCHECK_TOLERANCE,
    ITEMS_STORE,
    USERS_STORE,
    EmbeddingStore,
    ModelScorer,
    ScoreFileScorer,
    StoreScorer,
    evaluate,
    model_grad_check,
    precompute_embeddings,
    prepare_training_set,
    train,
)
from .visualization import plot_eval_history

logger = logging.getLogger(__name__)

CONFIG_FILE = "config.txt"
VOCAB_FILE = "vocab.txt"
STORES_DIR = "stores"
SCORES_FILE = "scores.tsv"

# flag dest -> config key
FLAG_KEYS = {
    "data": "data_dir",
    "run": "run_dir",
    "behaviors": "behaviors_file",
    "out": "out",
    "stores": "stores_dir",
    "scores": "scores_file",
    "coords": "gradcheck_coords",
    "reps": "benchmark_reps",
    "limit": "entropy_limit",
    "seed": "seed",
    "threads": "threads",
    "no_uhs": "no_uhs",
    "full_attention": "full_attention",
    "m": "user_codes",
    "n": "candidate_codes",
    "no_sessions": "no_sessions",
    "no_summary": "no_summary",
    "summary_only": "summary_only",
    "freeze_encoder": "freeze_encoder",
    "no_local_window": "no_local_window",
    "no_global_tokens": "no_global_tokens",
    "no_random_tokens": "no_random_tokens",
    "window": "window",
    "random_ratio": "random_ratio",
    "epochs": "epochs",
    "history_cap": "history_cap",
}


class PolyrecArgumentParser(argparse.ArgumentParser):
    """Usage errors become :class:`UsageError` so they map to exit code 1."""

    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(message)


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key=value config file")
    common.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
        help="override one config key (repeatable)",
    )
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int, help="evaluation threads (0 = all cores)")
    common.add_argument("--out", type=Path, help="output file or directory (out)")
    common.add_argument("--data", type=Path, help="directory with catalog.tsv and behaviors.tsv (data_dir)")
    common.add_argument("--run", type=Path, help="training run directory (run_dir)")
    common.add_argument("--behaviors", type=Path, help="behaviors file to evaluate or score (behaviors_file)")
    common.add_argument("--verbose", action="store_true", help="debug logging")

    ablations = common.add_argument_group("model and ablation options")
    for flag in (
        "no-uhs", "full-attention", "no-sessions", "no-summary", "summary-only", "freeze-encoder",
        "no-local-window", "no-global-tokens", "no-random-tokens",
    ):
        ablations.add_argument(f"--{flag}", action="store_const", const=True, default=None)
    ablations.add_argument("--m", type=int, help="user interest codes (user_codes)")
    ablations.add_argument("--n", type=int, help="candidate codes (candidate_codes)")
    ablations.add_argument("--window", type=int)
    ablations.add_argument("--random-ratio", type=float)
    ablations.add_argument("--epochs", type=int)
    ablations.add_argument("--history-cap", type=int)
    return common


KEYS_EPILOG = "config keys (file, --set KEY=VALUE):\n" + describe_keys()


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = PolyrecArgumentParser(
        prog="polyrec",
        description="Session-sparse poly-attention content recommender.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=KEYS_EPILOG,
    )
    commands = parser.add_subparsers(dest="command", required=True, parser_class=PolyrecArgumentParser)

    def command(name: str, help: str) -> argparse.ArgumentParser:
        return commands.add_parser(
            name,
            parents=[common],
            help=help,
            formatter_class=argparse.RawDescriptionHelpFormatter,
            epilog=KEYS_EPILOG,
        )

    command("synth", "write a planted-preference synthetic dataset")
    command("summarize", "generate user-interest summaries")
    command("train", "train a model into --out (default: --run)")
    evaluate_cmd = command("eval", "evaluate a run, stores or a scores file")
    evaluate_cmd.add_argument("--scores", type=Path, help="impression_id/candidate_id/score rows (scores_file)")
    evaluate_cmd.add_argument("--stores", type=Path, help="directory of precomputed embeddings (stores_dir)")
    command("precompute", "store user and item embeddings")
    score_cmd = command("score", "score impressions from stores")
    score_cmd.add_argument("--stores", type=Path, help="directory of precomputed embeddings (stores_dir)")
    gradcheck_cmd = command("gradcheck", "finite-difference check of a tiny model")
    gradcheck_cmd.add_argument("--coords", type=int, help="coordinates sampled per parameter (gradcheck_coords)")
    bench_cmd = command("benchmark", "encoder cost with and without sessions")
    bench_cmd.add_argument("--reps", type=int, help="timed repetitions (benchmark_reps)")
    entropy_cmd = command("entropy", "UHS attention entropy, sparse vs full")
    entropy_cmd.add_argument("--limit", type=int, help="users probed (entropy_limit)")
    return parser


def _override_values(args: argparse.Namespace) -> Dict[str, Any]:
    values: Dict[str, Any] = {}
    for item in args.overrides:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        values[key.strip()] = value.strip()
    for dest, key in FLAG_KEYS.items():
        value = getattr(args, dest, None)
        if value is not None:
            values[key] = str(value) if isinstance(value, Path) else value
    return values


def _settings(args: argparse.Namespace, *, from_run: bool) -> Settings:
    overrides = _override_values(args)
    if not from_run:
        return load_settings(args.config, overrides)
    # run_dir itself may come from --config or --set, so locate the run first
    layers = [read_config_file(args.config)] if args.config is not None else []
    run_dir = Path(resolve_values([*layers, overrides])["run_dir"])
    return load_settings(args.config, overrides, base_path=run_dir / CONFIG_FILE)


# --------------------------------------------------------------------------- shared steps


def _summaries(settings: Settings, data_dir: Path, bundle: DataBundle) -> Dict[str, str]:
    if settings.model.ablation.no_summary:
        return {}
    path = data_dir / SUMMARIES_FILE
    if path.exists():
        return read_summaries(path)
    logger.warning("%s not found; writing stub summaries", path)
    cache = SummaryCache()
    summarize_users(profile_histories(bundle.records, bundle.catalog), settings.prompt, StubSummaryBackend(), cache=cache)
    cache.save(path)
    return cache.summaries()


@dataclass
class LoadedRun:
    settings: Settings
    bundle: DataBundle
    featurizer: Featurizer
    model: PolyRecommender


def _load_run(args: argparse.Namespace) -> LoadedRun:
    settings = _settings(args, from_run=True)
    vocab_path = settings.run_dir / VOCAB_FILE
    if not vocab_path.exists():
        raise UsageError(f"{settings.run_dir} is not a training run (no {VOCAB_FILE})")
    bundle = load_data_dir(settings.data_dir)
    featurizer = Featurizer(
        vocab=Vocabulary.load(vocab_path),
        catalog=bundle.catalog,
        text=settings.text,
        ablation=settings.model.ablation,
        summaries=_summaries(settings, settings.data_dir, bundle),
    )
    model = build_model(settings.model, settings.seed)
    load_checkpoint(model, settings.run_dir / CHECKPOINT_FILE)
    model.eval()
    return LoadedRun(settings=settings, bundle=bundle, featurizer=featurizer, model=model)


def _eval_records(settings: Settings, records: Sequence[BehaviorRecord]) -> List[BehaviorRecord]:
    if settings.behaviors_file is not None:
        return parse_behaviors(settings.behaviors_file)
    _, dev = split_impressions(records, settings.train.dev_fraction, settings.seed)
    return dev


def _print_report(report: EvalReport) -> None:
    print(
        f"impressions={report.n_impressions} auc={report.auc:.4f} mrr={report.mrr:.4f} "
        f"ndcg5={report.ndcg5:.4f} ndcg10={report.ndcg10:.4f} skipped_auc={report.skipped_auc}"
    )


# --------------------------------------------------------------------------- commands


def cmd_synth(args: argparse.Namespace) -> int:
    settings = _settings(args, from_run=False)
    out_dir = settings.out or settings.data_dir
    dataset = generate_synthetic(settings.synth, out_dir)
    print(f"catalog: {dataset.catalog_path}")
    print(f"behaviors: {dataset.behaviors_path}")
    print(f"preferences: {dataset.preferences_path}")
    return EXIT_OK


def cmd_summarize(args: argparse.Namespace) -> int:
    settings = _settings(args, from_run=False)
    bundle = load_data_dir(settings.data_dir, settings.behaviors_file)
    out_path = settings.out or settings.data_dir / SUMMARIES_FILE
    profiler = load_profiler_settings(settings.profiler)
    cache = SummaryCache.load(out_path)
    try:
        summaries = summarize_users(
            profile_histories(bundle.records, bundle.catalog),
            settings.prompt,
            make_backend(profiler),
            cache=cache,
            max_in_flight=profiler.max_in_flight,
        )
    finally:
        # finished summaries are kept even when some requests failed
        cache.save(out_path)
    print(f"{len(summaries)} summaries written to {out_path}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    settings = _settings(args, from_run=False)
    run_dir = settings.out or settings.run_dir
    run_dir.mkdir(parents=True, exist_ok=True)
    bundle = load_data_dir(settings.data_dir, settings.behaviors_file)
    featurizer = Featurizer.fit(
        bundle.catalog,
        settings.text,
        ablation=settings.model.ablation,
        summaries=_summaries(settings, settings.data_dir, bundle),
    )
    (run_dir / CONFIG_FILE).write_text(dump_config_text(settings.values), encoding="utf-8")
    featurizer.vocab.save(run_dir / VOCAB_FILE)

    model = build_model(settings.model, settings.seed)
    dataset = prepare_training_set(bundle, featurizer, settings.train)
    result = train(settings.train, dataset, model, run_dir=run_dir, eval_threads=settings.threads)

    if result.history:
        export_to_csv(result.history, run_dir / "eval_history.csv")
        export_to_excel(result.history, run_dir / "eval_history.xlsx")
        plot_eval_history(result.history, run_dir / "eval_history.png")
    if result.best is not None:
        print(f"best dev step {result.best.step}")
        _print_report(result.best)
    print(f"checkpoint: {result.checkpoint}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    settings = _settings(args, from_run=False)
    if settings.scores_file is not None:
        records = parse_behaviors(settings.behaviors_file or settings.data_dir / BEHAVIORS_FILE)
        report = evaluate(ScoreFileScorer.load(settings.scores_file), records, threads=settings.threads)
    else:
        loaded = _load_run(args)
        records = _eval_records(loaded.settings, loaded.bundle.records)
        stores = loaded.settings.stores_dir
        if stores is not None:
            scorer = StoreScorer(
                loaded.model,
                EmbeddingStore.load(stores, USERS_STORE),
                EmbeddingStore.load(stores, ITEMS_STORE),
            )
        else:
            scorer = ModelScorer(loaded.model, loaded.featurizer)
        report = evaluate(scorer, records, threads=loaded.settings.threads)
    _print_report(report)
    return EXIT_OK


def cmd_precompute(args: argparse.Namespace) -> int:
    loaded = _load_run(args)
    settings = loaded.settings
    records = parse_behaviors(settings.behaviors_file) if settings.behaviors_file else loaded.bundle.records
    users, items = precompute_embeddings(
        loaded.model, loaded.featurizer, latest_histories(records), list(loaded.bundle.catalog)
    )
    out_dir = settings.out or settings.run_dir / STORES_DIR
    users.save(out_dir, USERS_STORE)
    items.save(out_dir, ITEMS_STORE)
    print(f"{len(users)} users x {users.vectors.shape[1:]} and {len(items)} items x {items.vectors.shape[1:]} in {out_dir}")
    return EXIT_OK


def cmd_score(args: argparse.Namespace) -> int:
    loaded = _load_run(args)
    settings = loaded.settings
    stores = settings.stores_dir or settings.run_dir / STORES_DIR
    scorer = StoreScorer(
        loaded.model, EmbeddingStore.load(stores, USERS_STORE), EmbeddingStore.load(stores, ITEMS_STORE)
    )
    records = parse_behaviors(settings.behaviors_file or settings.data_dir / BEHAVIORS_FILE)
    out_path = settings.out or settings.run_dir / SCORES_FILE
    out_path.parent.mkdir(parents=True, exist_ok=True)
    rows = 0
    with out_path.open("w", encoding="utf-8", newline="\n") as handle:
        for record in records:
            for content_id, value in zip(record.impression.candidate_ids, scorer.score(record)):
                handle.write(f"{record.impression.impression_id}\t{content_id}\t{value!r}\n")
                rows += 1
    print(f"{rows} scores written to {out_path}")
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace) -> int:
    settings = _settings(args, from_run=False)
    errors = model_grad_check(settings.seed, coords_per_param=int(settings.values["gradcheck_coords"]))
    for name, error in errors.items():
        print(f"{name:<48} {error:.3e}")
    worst = max(errors.values())
    print(f"max relative error: {worst:.3e}")
    if worst >= GRADCHECK_TOLERANCE:
        raise NumericalError(f"gradient check failed: {worst:.3e} >= {GRADCHECK_TOLERANCE}")
    return EXIT_OK


def cmd_benchmark(args: argparse.Namespace) -> int:
    settings = _settings(args, from_run=False)
    encoder = settings.model.encoder
    reps = int(settings.values["benchmark_reps"])
    print(f"{'sessions':>8} {'tokens':>8} {'seconds':>10}")
    for row in scaling_table(encoder, repetitions=reps, seed=settings.seed):
        print(f"{row.sessions:>8} {row.total_tokens:>8} {row.seconds:>10.4f}")
    comparison = compare_sparsity(encoder, repetitions=reps, seed=settings.seed)
    print(f"8x512 sessions: {comparison.sessioned.seconds:.4f}s")
    print(f"1x4096 full:    {comparison.single.seconds:.4f}s")
    print(f"ratio: {comparison.ratio:.3f}")
    return EXIT_OK


def cmd_entropy(args: argparse.Namespace) -> int:
    loaded = _load_run(args)
    records = _eval_records(loaded.settings, loaded.bundle.records)
    report = entropy_probe(
        loaded.model, loaded.featurizer, records, limit=int(loaded.settings.values["entropy_limit"])
    )
    print(f"{'code':>4} {'sparse':>8} {'full':>8}")
    for code, (sparse, full) in enumerate(zip(report.sparse, report.full)):
        print(f"{code:>4} {sparse:>8.4f} {full:>8.4f}")
    print(f"mean sparse={report.sparse_mean:.4f} full={report.full_mean:.4f}")
    print(f"sparse lower for {report.sparse_lower}/{report.users} users")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "summarize": cmd_summarize,
    "train": cmd_train,
    "eval": cmd_eval,
    "precompute": cmd_precompute,
    "score": cmd_score,
    "gradcheck": cmd_gradcheck,
    "benchmark": cmd_benchmark,
    "entropy": cmd_entropy,
}


def _configure_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Parse ``argv`` and run one command; returns the process exit code."""

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"polyrec: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        return int(exc.code or 0)

    _configure_logging(args.verbose)
    torch.set_num_threads(1)
    try:
        return COMMANDS[args.command](args)
    except PolyrecError as exc:
        logger.error("%s", exc)
        return exc.exit_code


def main() -> None:
    sys.exit(run())


__all__ = ["COMMANDS", "FLAG_KEYS", "build_parser", "main", "run"]
