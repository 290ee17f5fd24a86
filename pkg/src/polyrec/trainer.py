"""Training loop, evaluation and embedding precomputation."""

from __future__ import annotations

import copy
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Protocol, Sequence, Tuple

import numpy as np
import torch
from torch.optim import Adam
from torch.optim.lr_scheduler import LambdaLR

from .checkpoint import save_checkpoint
from .config import EncoderConfig, ModelConfig, TrainConfig
from .dataio import build_train_examples, split_impressions
from .encoder import SessionBatch
from .exceptions import (
    DataFormatError,
    EmptyHistoryError,
    NumericalError,
    UndefinedMetricError,
    UnknownIdError,
)
from .featurize import DataBundle, Featurizer, UserInput
from .metrics import auc, mean, mrr, ndcg_at_k
from .models import BehaviorRecord, EvalReport, TrainExample
from .numerics import LrGroup, collect_parameters, grad_check, seed_everything
from .predictor import nce_loss
from .recommender import PolyRecommender, build_model
from .textprep import SOS_ID, wrap

logger = logging.getLogger(__name__)

CHECKPOINT_FILE = "model.ckpt"
PROGRESS_FILE = "progress.log"
USERS_STORE = "users"
ITEMS_STORE = "items"


def lr_factor(step: int, total_steps: int, warmup_steps: int) -> float:
    """Linear warm-up to 1 over ``warmup_steps``, then linear decay to 0 at ``total_steps``."""

    if warmup_steps > 0 and step < warmup_steps:
        return step / warmup_steps
    if total_steps <= warmup_steps:
        return 0.0
    return max(0.0, (total_steps - step) / (total_steps - warmup_steps))


def parameter_groups(model: torch.nn.Module, config: TrainConfig) -> List[dict]:
    """Adam groups: the shared encoder at ``base_lr``, new layers at ``base_lr * multiplier``."""

    grouped: Dict[LrGroup, List[torch.nn.Parameter]] = {LrGroup.BASE: [], LrGroup.NEW_LAYER: []}
    for param in collect_parameters(model):
        if param.tensor.requires_grad:
            grouped[param.lr_group].append(param.tensor)
    rates = {
        LrGroup.BASE: config.base_lr,
        LrGroup.NEW_LAYER: config.base_lr * config.new_layer_lr_multiplier,
    }
    return [
        {"params": tensors, "lr": rates[group], "name": group.value}
        for group, tensors in grouped.items()
        if tensors
    ]


# --------------------------------------------------------------------------- scoring


class Scorer(Protocol):
    def score(self, record: BehaviorRecord) -> List[float]:
        ...


def user_vectors(model: PolyRecommender, user: UserInput) -> torch.Tensor:
    """Gamma ``[m, r]`` of one user, computed on its own under the evaluation mask."""

    with torch.no_grad():
        return model.user_embedding(user)


def item_vectors(model: PolyRecommender, featurizer: Featurizer, content_id: str) -> torch.Tensor:
    """Lambda ``[n, r]`` of one candidate, computed on its own."""

    with torch.no_grad():
        return model.candidate_embeddings(featurizer.candidate_batch([content_id]))[0]


def score_vectors(model: PolyRecommender, gamma: torch.Tensor, lambdas: Sequence[torch.Tensor]) -> List[float]:
    with torch.no_grad():
        scores = model.score(gamma.unsqueeze(0), torch.stack(list(lambdas)).unsqueeze(0))
    return scores[0].tolist()


class ModelScorer:
    """Live forward pass; each record is scored against the history it carries."""

    def __init__(self, model: PolyRecommender, featurizer: Featurizer) -> None:
        self.model = model
        self.model.eval()
        self.featurizer = featurizer
        self._items: Dict[str, torch.Tensor] = {}

    def _item(self, content_id: str) -> torch.Tensor:
        cached = self._items.get(content_id)
        if cached is None:
            cached = item_vectors(self.model, self.featurizer, content_id)
            self._items[content_id] = cached
        return cached

    def score(self, record: BehaviorRecord) -> List[float]:
        user = self.featurizer.user_input(record.user_id, record.history)
        gamma = user_vectors(self.model, user)
        return score_vectors(self.model, gamma, [self._item(cid) for cid in record.impression.candidate_ids])


@dataclass
class EmbeddingStore:
    """Precomputed code embeddings ``[N, codes, r]`` keyed by id."""

    ids: Tuple[str, ...]
    vectors: np.ndarray
    _index: Dict[str, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if len(self.ids) != self.vectors.shape[0]:
            raise ValueError("store ids and vectors differ in length")
        self._index = {identifier: row for row, identifier in enumerate(self.ids)}
        if len(self._index) != len(self.ids):
            raise ValueError("store ids must be unique")

    def __contains__(self, identifier: str) -> bool:
        return identifier in self._index

    def __len__(self) -> int:
        return len(self.ids)

    def get(self, identifier: str, kind: str = "id") -> np.ndarray:
        row = self._index.get(identifier)
        if row is None:
            raise UnknownIdError(kind, identifier)
        return self.vectors[row]

    def save(self, directory: str | Path, name: str) -> Path:
        root = Path(directory)
        root.mkdir(parents=True, exist_ok=True)
        np.save(root / f"{name}.npy", np.ascontiguousarray(self.vectors, dtype="<f4"))
        (root / f"{name}.ids").write_text("".join(f"{i}\n" for i in self.ids), encoding="utf-8")
        return root / f"{name}.npy"

    @classmethod
    def load(cls, directory: str | Path, name: str) -> "EmbeddingStore":
        root = Path(directory)
        vectors_path, ids_path = root / f"{name}.npy", root / f"{name}.ids"
        if not vectors_path.exists() or not ids_path.exists():
            raise DataFormatError(root, None, f"missing {name}.npy or {name}.ids")
        ids = tuple(ids_path.read_text(encoding="utf-8").splitlines())
        vectors = np.load(vectors_path)
        if vectors.ndim != 3 or vectors.shape[0] != len(ids):
            raise DataFormatError(vectors_path, None, f"store shape {vectors.shape} does not match {len(ids)} ids")
        return cls(ids=ids, vectors=vectors)


class StoreScorer:
    """Scores from precomputed stores; only the score head runs."""

    def __init__(self, model: PolyRecommender, users: EmbeddingStore, items: EmbeddingStore) -> None:
        self.model = model
        self.users = users
        self.items = items

    def score(self, record: BehaviorRecord) -> List[float]:
        gamma = torch.from_numpy(self.users.get(record.user_id, "user").copy())
        lambdas = [
            torch.from_numpy(self.items.get(cid, "content").copy())
            for cid in record.impression.candidate_ids
        ]
        return score_vectors(self.model, gamma, lambdas)


class ScoreFileScorer:
    """Scores read from ``impression_id, candidate_id, score`` rows."""

    def __init__(self, scores: Mapping[Tuple[str, str], float]) -> None:
        self.scores = dict(scores)

    @classmethod
    def load(cls, path: str | Path) -> "ScoreFileScorer":
        return cls(read_scores(path))

    def score(self, record: BehaviorRecord) -> List[float]:
        impression_id = record.impression.impression_id
        values = []
        for content_id in record.impression.candidate_ids:
            value = self.scores.get((impression_id, content_id))
            if value is None:
                raise UnknownIdError("scored candidate", f"{impression_id}/{content_id}")
            values.append(value)
        return values


def read_scores(path: str | Path) -> Dict[Tuple[str, str], float]:
    file_path = Path(path)
    if not file_path.exists():
        raise DataFormatError(file_path, None, "scores file not found")
    scores: Dict[Tuple[str, str], float] = {}
    for number, line in enumerate(file_path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        columns = line.split("\t")
        if len(columns) != 3:
            raise DataFormatError(file_path, number, f"expected 3 columns, got {len(columns)}")
        try:
            scores[(columns[0], columns[1])] = float(columns[2])
        except ValueError as exc:
            raise DataFormatError(file_path, number, f"score {columns[2]!r} is not numeric") from exc
    return scores


def write_scores(rows: Iterable[Tuple[str, str, float]], path: str | Path) -> Path:
    file_path = Path(path)
    file_path.parent.mkdir(parents=True, exist_ok=True)
    with file_path.open("w", encoding="utf-8", newline="\n") as handle:
        for impression_id, content_id, value in rows:
            handle.write(f"{impression_id}\t{content_id}\t{value!r}\n")
    return file_path


# --------------------------------------------------------------------------- evaluation


def _impression_metrics(scores: Sequence[float], labels: Sequence[int]) -> Dict[str, Optional[float]]:
    result: Dict[str, Optional[float]] = {"auc": None, "mrr": None, "ndcg5": None, "ndcg10": None}
    try:
        result["auc"] = auc(scores, labels)
    except UndefinedMetricError:
        pass
    if any(labels):
        result["mrr"] = mrr(scores, labels)
        result["ndcg5"] = ndcg_at_k(scores, labels, 5)
        result["ndcg10"] = ndcg_at_k(scores, labels, 10)
    return result


def evaluate(
    scorer: Scorer,
    records: Sequence[BehaviorRecord],
    *,
    threads: int = 1,
    step: int = 0,
) -> EvalReport:
    """
    Score every impression, compute per-impression metrics and macro-average
    them. Single-class impressions are left out of AUC and counted.
    """

    if not records:
        raise UndefinedMetricError("no impressions to evaluate")

    def one(record: BehaviorRecord) -> Optional[Dict[str, Optional[float]]]:
        try:
            scores = scorer.score(record)
        except EmptyHistoryError:
            return None
        return _impression_metrics(scores, record.impression.labels)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_impression = list(pool.map(one, records))
    else:
        per_impression = [one(record) for record in records]

    unscored = sum(1 for values in per_impression if values is None)
    if unscored:
        logger.warning("%d impressions have no usable user history and were not scored", unscored)
    per_impression = [values for values in per_impression if values is not None]
    if not per_impression:
        raise UndefinedMetricError("no impression could be scored")

    def collect(name: str) -> List[float]:
        return [values[name] for values in per_impression if values[name] is not None]

    aucs = collect("auc")
    skipped = len(per_impression) - len(aucs)
    if skipped:
        logger.warning("AUC undefined for %d single-class impressions", skipped)
    return EvalReport(
        auc=mean(aucs),
        mrr=mean(collect("mrr")),
        ndcg5=mean(collect("ndcg5")),
        ndcg10=mean(collect("ndcg10")),
        n_impressions=len(per_impression),
        step=step,
        skipped_auc=skipped,
        extra={"unscored": unscored} if unscored else {},
    )


def evaluate_history_lengths(
    model: PolyRecommender,
    featurizer: Featurizer,
    records: Sequence[BehaviorRecord],
    caps: Sequence[int],
    *,
    threads: int = 1,
) -> Dict[int, EvalReport]:
    """Evaluate one model with the user history truncated to each cap in turn."""

    reports = {}
    for cap in caps:
        capped = replace(featurizer, text=replace(featurizer.text, history_cap=cap))
        reports[cap] = evaluate(ModelScorer(model, capped), records, threads=threads)
        logger.info("history_cap=%d auc=%.4f", cap, reports[cap].auc)
    return reports


# --------------------------------------------------------------------------- precompute


def precompute_embeddings(
    model: PolyRecommender,
    featurizer: Featurizer,
    histories: Mapping[str, Sequence[str]],
    candidate_ids: Sequence[str],
) -> Tuple[EmbeddingStore, EmbeddingStore]:
    """
    Gamma for every user with a usable history and Lambda for every
    candidate, each computed independently of the other side.
    """

    model.eval()
    user_ids: List[str] = []
    gammas: List[np.ndarray] = []
    for user_id in sorted(histories):
        try:
            user = featurizer.user_input(user_id, histories[user_id])
        except EmptyHistoryError:
            logger.warning("no usable history for user %s; not stored", user_id)
            continue
        user_ids.append(user_id)
        gammas.append(user_vectors(model, user).numpy())

    item_ids = sorted(set(candidate_ids))
    lambdas = [item_vectors(model, featurizer, cid).numpy() for cid in item_ids]

    rep_dim = model.config.rep_dim
    users = EmbeddingStore(
        ids=tuple(user_ids),
        vectors=np.stack(gammas) if gammas else np.zeros((0, model.config.user_codes, rep_dim), np.float32),
    )
    items = EmbeddingStore(
        ids=tuple(item_ids),
        vectors=np.stack(lambdas) if lambdas else np.zeros((0, model.config.candidate_codes, rep_dim), np.float32),
    )
    logger.info("precomputed %d user and %d item embeddings", len(users), len(items))
    return users, items


# --------------------------------------------------------------------------- training


@dataclass
class TrainingSet:
    featurizer: Featurizer
    train_records: List[BehaviorRecord]
    dev_records: List[BehaviorRecord]


@dataclass
class TrainResult:
    best: Optional[EvalReport]
    history: List[EvalReport]
    losses: List[float]
    checkpoint: Optional[Path] = None
    steps: int = 0


def prepare_training_set(bundle: DataBundle, featurizer: Featurizer, config: TrainConfig) -> TrainingSet:
    train_records, dev_records = split_impressions(bundle.records, config.dev_fraction, config.seed)
    logger.info("split %d impressions into %d train / %d dev", len(bundle.records), len(train_records), len(dev_records))
    return TrainingSet(featurizer=featurizer, train_records=train_records, dev_records=dev_records)


def batch_loss(
    model: PolyRecommender,
    featurizer: Featurizer,
    examples: Sequence[TrainExample],
    inputs: Mapping[str, UserInput],
    mask_seed: int,
) -> torch.Tensor:
    """NCE loss of one batch; ``inputs`` maps impression id to the user's featurized history."""

    users = model.user_embeddings([inputs[example.impression_id] for example in examples], mask_seed)
    slate = 1 + len(examples[0].negatives)
    content_ids = [cid for example in examples for cid in (example.positive, *example.negatives)]
    candidates = model.candidate_embeddings(featurizer.candidate_batch(content_ids))
    candidates = candidates.view(len(examples), slate, *candidates.shape[1:])
    scores = model.score(users, candidates)
    return nce_loss(scores[:, 0], scores[:, 1:])


def _featurize_impressions(
    featurizer: Featurizer, records: Sequence[BehaviorRecord]
) -> Dict[str, UserInput]:
    inputs: Dict[str, UserInput] = {}
    for record in records:
        try:
            inputs[record.impression.impression_id] = featurizer.user_input(record.user_id, record.history)
        except EmptyHistoryError:
            continue
    return inputs


def train(
    config: TrainConfig,
    dataset: TrainingSet,
    model: PolyRecommender,
    *,
    run_dir: Optional[str | Path] = None,
    eval_threads: int = 1,
    on_report: Optional[Callable[[EvalReport], None]] = None,
) -> TrainResult:
    """
    Adam with linear warm-up and decay over per-step NCE batches. The dev
    set is evaluated every ``eval_every_steps`` (or once per epoch) and the
    weights with the best dev AUC are kept; ties keep the earlier step.
    """

    torch.set_num_threads(1)
    # dropout draws from the global generator
    seed_everything(config.seed)
    featurizer = dataset.featurizer
    inputs = _featurize_impressions(featurizer, dataset.train_records)
    examples, _ = build_train_examples(
        [r.impression for r in dataset.train_records], config.negatives, config.seed
    )
    usable = [example for example in examples if example.impression_id in inputs]
    if len(usable) < len(examples):
        logger.warning("dropped %d examples whose user has no usable history", len(examples) - len(usable))
    if not usable:
        raise EmptyHistoryError("no training examples with a usable user history")

    steps_per_epoch = math.ceil(len(usable) / config.batch_size)
    total_steps = steps_per_epoch * config.epochs
    warmup_steps = int(config.warmup_fraction * total_steps)
    optimizer = Adam(parameter_groups(model, config))
    scheduler = LambdaLR(optimizer, lambda step: lr_factor(step, total_steps, warmup_steps))
    logger.info(
        "training on %d examples: %d epochs x %d steps (warm-up %d)",
        len(usable), config.epochs, steps_per_epoch, warmup_steps,
    )

    root = Path(run_dir) if run_dir is not None else None
    progress = root / PROGRESS_FILE if root is not None else None
    if progress is not None:
        root.mkdir(parents=True, exist_ok=True)
        progress.write_text("", encoding="utf-8")

    history: List[EvalReport] = []
    losses: List[float] = []
    best: Optional[EvalReport] = None
    best_state: Optional[dict] = None
    checkpoint: Optional[Path] = None

    def checkpoint_now(step: int) -> None:
        nonlocal best, best_state, checkpoint
        if not dataset.dev_records:
            return
        model.eval()
        report = evaluate(ModelScorer(model, featurizer), dataset.dev_records, threads=eval_threads, step=step)
        history.append(report)
        logger.info("eval %s", report.progress_line())
        if progress is not None:
            with progress.open("a", encoding="utf-8") as handle:
                handle.write(report.progress_line() + "\n")
        if on_report is not None:
            on_report(report)
        if best is None or report.auc > best.auc:
            best = report
            best_state = copy.deepcopy(model.state_dict())
            if root is not None:
                checkpoint = save_checkpoint(model, root / CHECKPOINT_FILE, seeds={"seed": config.seed, "step": step})

    checkpoint_now(0)
    step = 0
    for epoch in range(config.epochs):
        order = np.random.default_rng([config.seed, epoch]).permutation(len(usable))
        for start in range(0, len(order), config.batch_size):
            batch = [usable[index] for index in order[start : start + config.batch_size].tolist()]
            step += 1
            model.train()
            loss = batch_loss(model, featurizer, batch, inputs, model.mask_seed + step)
            value = float(loss.detach())
            if not math.isfinite(value):
                rates = ", ".join(f"{group['name']}={group['lr']:.3g}" for group in optimizer.param_groups)
                raise NumericalError(
                    f"non-finite loss {value} at step {step} (epoch {epoch + 1}, lr {rates}, "
                    f"impressions {[example.impression_id for example in batch[:4]]})"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            scheduler.step()
            losses.append(value)
            if config.eval_every_steps and step % config.eval_every_steps == 0:
                checkpoint_now(step)
        logger.info("epoch %d/%d mean loss %.4f", epoch + 1, config.epochs, mean(losses[-steps_per_epoch:]))
        if not config.eval_every_steps:
            checkpoint_now(step)

    if best_state is not None:
        model.load_state_dict(best_state)
    elif root is not None:
        checkpoint = save_checkpoint(model, root / CHECKPOINT_FILE, seeds={"seed": config.seed, "step": step})
    model.eval()
    return TrainResult(best=best, history=history, losses=losses, checkpoint=checkpoint, steps=step)


# --------------------------------------------------------------------------- gradient check

GRADCHECK_TOLERANCE = 1e-3


def tiny_model_config() -> ModelConfig:
    """Two-layer encoder, d=32, k=8, m=4, n=2, init std 0.1."""

    encoder = EncoderConfig(
        layers=2, heads=2, model_dim=32, ffn_dim=64, max_session_tokens=64, vocab_size=64, dropout=0.0
    )
    return ModelConfig(
        encoder=encoder,
        code_dim=16,
        uhs_codes=8,
        user_codes=4,
        candidate_codes=2,
        rep_dim=32,
        window=8,
        random_ratio=0.25,
        init_std=0.1,
    )


def model_grad_check(
    seed: int = 1,
    *,
    config: Optional[ModelConfig] = None,
    eps: float = 1e-6,
    coords_per_param: int = 16,
) -> Dict[str, float]:
    """
    Finite-difference check of every trainable parameter of a tiny model on
    an NCE loss over two users. Runs in float64.
    """

    config = config or tiny_model_config()
    model = build_model(config, seed).double()
    model.eval()
    rng = np.random.default_rng(seed)
    vocab = config.encoder.vocab_size

    def item(length: int) -> List[int]:
        return wrap(rng.integers(SOS_ID + 2, vocab, size=length).tolist())

    users = [
        UserInput("u0", sessions=(tuple(item(4) + item(3)), tuple(item(5))), summary=tuple(item(4))),
        UserInput("u1", sessions=(tuple(item(3) + item(4) + item(2)),)),
    ]
    candidates = SessionBatch.from_sequences([item(int(length)) for length in rng.integers(2, 6, size=6)])

    def loss_fn() -> torch.Tensor:
        gammas = model.user_embeddings(users)
        lambdas = model.candidate_embeddings(candidates)
        lambdas = lambdas.view(len(users), 3, *lambdas.shape[1:])
        scores = model.score(gammas, lambdas)
        return nce_loss(scores[:, 0], scores[:, 1:])

    params = [param for param in collect_parameters(model) if param.tensor.requires_grad]
    errors = grad_check(loss_fn, params, eps, coords_per_param=coords_per_param, seed=seed)
    worst = max(errors.values())
    logger.info("grad check over %d parameters: max relative error %.3e", len(params), worst)
    return errors


__all__ = [
    "CHECKPOINT_FILE",
    "EmbeddingStore",
    "GRADCHECK_TOLERANCE",
    "ITEMS_STORE",
    "ModelScorer",
    "PROGRESS_FILE",
    "ScoreFileScorer",
    "Scorer",
    "StoreScorer",
    "TrainResult",
    "TrainingSet",
    "USERS_STORE",
    "batch_loss",
    "evaluate",
    "evaluate_history_lengths",
    "item_vectors",
    "lr_factor",
    "model_grad_check",
    "parameter_groups",
    "precompute_embeddings",
    "prepare_training_set",
    "read_scores",
    "score_vectors",
    "tiny_model_config",
    "train",
    "user_vectors",
    "write_scores",
]
