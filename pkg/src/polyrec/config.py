"""Central configuration helpers for polyrec.

Configuration is a flat ``key=value`` text file. Every key is declared once
in :data:`CONFIG_KEYS`; unknown keys are rejected. Values are layered
(defaults, then files, then explicit overrides) and turned into the frozen
dataclasses the rest of the package consumes.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, Mapping, Optional

from .exceptions import ConfigError
from .textprep import TEMPLATES, split_words

PROFILER_URL_ENV_VAR = "POLYREC_PROFILER_URL"
PROFILER_TOKEN_ENV_VAR = "POLYREC_PROFILER_TOKEN"
DEFAULT_ENV_FILE = Path(".env")


def _parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in {"1", "true", "yes", "on"}:
        return True
    if lowered in {"0", "false", "no", "off"}:
        return False
    raise ValueError(f"not a boolean: {raw!r}")


@dataclass(frozen=True)
class ConfigKey:
    name: str
    kind: Callable[[str], Any]
    default: Any
    help: str


def _key(name: str, kind: Callable[[str], Any], default: Any, help: str) -> ConfigKey:
    return ConfigKey(name=name, kind=kind, default=default, help=help)


CONFIG_KEYS: Dict[str, ConfigKey] = {
    key.name: key
    for key in (
        # paths (per invocation; not written to a run snapshot)
        _key("data_dir", str, "data", "directory with catalog.tsv and behaviors.tsv"),
        _key("run_dir", str, "run", "training run directory"),
        _key("behaviors_file", str, "", "behaviors file to evaluate or score (empty = the data or dev split)"),
        _key("out", str, "", "output file or directory (empty = the command's default)"),
        _key("stores_dir", str, "", "precomputed embedding stores (empty = <run_dir>/stores)"),
        _key("scores_file", str, "", "eval: impression_id/candidate_id/score rows to evaluate instead of a model"),
        _key("gradcheck_coords", int, 16, "gradcheck: coordinates sampled per parameter"),
        _key("benchmark_reps", int, 10, "benchmark: timed repetitions per measurement"),
        _key("entropy_limit", int, 100, "entropy: users probed"),
        # general
        _key("seed", int, 1, "master seed for init, sampling and masks"),
        _key("threads", int, 0, "evaluation threads (0 = available parallelism); training uses 1"),
        _key("schema", str, "news", "content template: news or book"),
        # textprep
        _key("vocab_size", int, 8192, "vocabulary size including the 4 reserved tokens"),
        _key("title_max_tokens", int, 12, "title/name token cap (32 news or 24 book at full scale)"),
        _key("abstract_max_tokens", int, 20, "abstract/description token cap (72 news or 85 book at full scale)"),
        _key("summary_max_tokens", int, 48, "user-interest summary token cap"),
        _key("history_cap", int, 30, "most recent engaged contents kept per user (60 at full scale)"),
        _key("session_size", int, 10, "contents per session"),
        # encoder
        _key("layers", int, 2, "transformer blocks in the session encoder"),
        _key("heads", int, 4, "attention heads per block"),
        _key("model_dim", int, 64, "encoder hidden width d"),
        _key("ffn_dim", int, 128, "feed-forward inner width"),
        _key("max_session_tokens", int, 512, "positional capacity of one session"),
        _key("dropout", float, 0.1, "dropout probability (training only)"),
        _key("init_std", float, 0.02, "std of the normal parameter init"),
        # poly-attention
        _key("code_dim", int, 0, "code hidden width p (0 = d/2)"),
        _key("uhs_codes", int, 0, "UHS codebook size k (0 = history_cap)"),
        _key("user_codes", int, 16, "UIE codebook size m"),
        _key("candidate_codes", int, 4, "CCS codebook size n"),
        _key("rep_dim", int, 0, "shared output projection width r (0 = d, no projection)"),
        _key("window", int, 64, "UHS local window width in tokens"),
        _key("random_ratio", float, 0.1, "fraction of remaining tokens randomly visible per code"),
        # ablations
        _key("no_uhs", _parse_bool, False, "use each item's SOS state instead of the UHS layer"),
        _key("full_attention", _parse_bool, False, "UHS attends to every token"),
        _key("no_sessions", _parse_bool, False, "one content per session"),
        _key("no_summary", _parse_bool, False, "drop the prepended user-interest summary"),
        _key("summary_only", _parse_bool, False, "user side is only the summary; UHS has one code"),
        _key("freeze_encoder", _parse_bool, False, "train only the new layers"),
        _key("no_local_window", _parse_bool, False, "drop the local window from the UHS mask"),
        _key("no_global_tokens", _parse_bool, False, "drop global SOS visibility from the UHS mask"),
        _key("no_random_tokens", _parse_bool, False, "drop random visibility from the UHS mask"),
        # training
        _key("epochs", int, 20, "training epochs"),
        _key("batch_size", int, 32, "training examples per step"),
        _key("base_lr", float, 1e-3, "peak learning rate of the encoder group (2e-5 for a pretrained encoder)"),
        _key("new_layer_lr_multiplier", float, 5.0, "new-layer learning rate multiplier"),
        _key("warmup_fraction", float, 0.1, "fraction of steps spent in linear warm-up"),
        _key("eval_every_steps", int, 0, "dev evaluation period in steps (0 = once per epoch)"),
        _key("negatives", int, 4, "negatives per positive (4 news or 2 book at full scale)"),
        _key("dev_fraction", float, 0.1, "fraction of impressions held out as dev"),
        # profiler
        _key("profiler_backend", str, "stub", "summary backend: stub or http"),
        _key("prompt_max_items", int, 30, "engaged contents listed in the prompt"),
        _key("prompt_max_words", int, 100, "words kept per abstract in the prompt"),
        _key("summary_sentences", int, 3, "sentences requested from the summarizer"),
        _key("profiler_max_tokens", int, 160, "completion budget sent to the http backend"),
        _key("profiler_timeout", float, 30.0, "http timeout in seconds"),
        _key("profiler_retries", int, 3, "http retries after the first attempt"),
        _key("profiler_max_in_flight", int, 4, "concurrent http summary requests"),
        # synthetic data
        _key("synth_users", int, 200, "synthetic users"),
        _key("synth_items", int, 500, "synthetic items"),
        _key("synth_categories", int, 8, "synthetic categories"),
        _key("synth_history", int, 30, "synthetic history length"),
        _key("synth_candidates", int, 10, "synthetic candidates per impression"),
        _key("synth_impressions", int, 3, "synthetic impressions per user"),
        _key("synth_label_noise", float, 0.1, "synthetic label flip probability"),
    )
}

INVOCATION_KEYS = (
    "data_dir",
    "run_dir",
    "behaviors_file",
    "out",
    "stores_dir",
    "scores_file",
    "gradcheck_coords",
    "benchmark_reps",
    "entropy_limit",
)


@dataclass(frozen=True)
class EncoderConfig:
    """Shape of the from-scratch session encoder."""

    layers: int = 2
    heads: int = 4
    model_dim: int = 64
    ffn_dim: int = 128
    max_session_tokens: int = 512
    vocab_size: int = 8192
    dropout: float = 0.1

    def __post_init__(self) -> None:
        if self.model_dim % self.heads:
            raise ConfigError("model_dim must be divisible by heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        for name in ("layers", "heads", "model_dim", "ffn_dim", "max_session_tokens", "vocab_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")


@dataclass(frozen=True)
class AblationFlags:
    no_uhs: bool = False
    full_attention: bool = False
    no_sessions: bool = False
    no_summary: bool = False
    summary_only: bool = False
    freeze_encoder: bool = False
    no_local_window: bool = False
    no_global_tokens: bool = False
    no_random_tokens: bool = False


@dataclass(frozen=True)
class ModelConfig:
    """Everything that determines parameter shapes and forward semantics."""

    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    code_dim: int = 32
    uhs_codes: int = 30
    user_codes: int = 16
    candidate_codes: int = 4
    rep_dim: int = 64
    window: int = 64
    random_ratio: float = 0.1
    init_std: float = 0.02
    ablation: AblationFlags = field(default_factory=AblationFlags)

    def __post_init__(self) -> None:
        if self.code_dim < 1 or self.code_dim > self.encoder.model_dim:
            raise ConfigError("code_dim must be in [1, model_dim]")
        for name in ("uhs_codes", "user_codes", "candidate_codes", "rep_dim", "window"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if not 0.0 <= self.random_ratio <= 1.0:
            raise ConfigError("random_ratio must be in [0, 1]")

    @property
    def projects_output(self) -> bool:
        return self.rep_dim != self.encoder.model_dim

    def snapshot(self) -> Dict[str, Any]:
        """Flat, JSON-friendly view used by checkpoints."""

        flat = asdict(self)
        encoder = flat.pop("encoder")
        ablation = flat.pop("ablation")
        flat.update(encoder)
        flat.update(ablation)
        return flat


@dataclass(frozen=True)
class TextConfig:
    schema: str = "news"
    vocab_size: int = 8192
    title_max_tokens: int = 12
    abstract_max_tokens: int = 20
    summary_max_tokens: int = 48
    history_cap: int = 30
    session_size: int = 10

    def __post_init__(self) -> None:
        if self.schema not in {"news", "book"}:
            raise ConfigError("schema must be news or book")
        if self.vocab_size <= 4:
            raise ConfigError("vocab_size must leave room beyond the 4 reserved tokens")
        for name in ("title_max_tokens", "abstract_max_tokens", "summary_max_tokens", "history_cap", "session_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    base_lr: float = 1e-3
    new_layer_lr_multiplier: float = 5.0
    warmup_fraction: float = 0.1
    eval_every_steps: int = 0
    negatives: int = 4
    dev_fraction: float = 0.1
    seed: int = 1

    def __post_init__(self) -> None:
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ConfigError("warmup_fraction must be in [0, 1)")
        if self.new_layer_lr_multiplier <= 0 or self.base_lr <= 0:
            raise ConfigError("learning rates must be positive")
        if self.epochs < 1 or self.batch_size < 1 or self.negatives < 1:
            raise ConfigError("epochs, batch_size and negatives must be positive")
        if not 0.0 <= self.dev_fraction < 1.0:
            raise ConfigError("dev_fraction must be in [0, 1)")
        if self.eval_every_steps < 0:
            raise ConfigError("eval_every_steps must be 0 or positive")


@dataclass(frozen=True)
class PromptSpec:
    """How the user-interest prompt is assembled."""

    max_items: int = 30
    max_words_per_abstract: int = 100
    sentence_budget: int = 3
    schema: str = "news"

    def __post_init__(self) -> None:
        if min(self.max_items, self.max_words_per_abstract, self.sentence_budget) < 1:
            raise ConfigError("prompt limits must be positive")


@dataclass(frozen=True)
class ProfilerSettings:
    backend: str = "stub"
    endpoint: Optional[str] = None
    token: Optional[str] = None
    max_tokens: int = 160
    timeout: float = 30.0
    retries: int = 3
    max_in_flight: int = 4

    def __post_init__(self) -> None:
        if self.max_tokens < 1 or self.max_in_flight < 1:
            raise ConfigError("profiler_max_tokens and profiler_max_in_flight must be positive")
        if self.retries < 0:
            raise ConfigError("profiler_retries must be 0 or positive")
        if self.timeout <= 0:
            raise ConfigError("profiler_timeout must be positive")


@dataclass(frozen=True)
class SynthConfig:
    n_users: int = 200
    n_items: int = 500
    n_categories: int = 8
    history_len: int = 30
    candidates_per_impression: int = 10
    impressions_per_user: int = 3
    label_noise: float = 0.1
    seed: int = 1

    def __post_init__(self) -> None:
        for name in (
            "n_users", "n_items", "n_categories", "history_len", "candidates_per_impression", "impressions_per_user"
        ):
            if getattr(self, name) < 1:
                raise ConfigError(f"synthetic {name} must be at least 1")
        if self.n_items < self.n_categories:
            raise ConfigError("synthetic n_items must cover every category")
        if not 0.0 <= self.label_noise < 0.5:
            raise ConfigError("synthetic label_noise must be in [0, 0.5)")


@dataclass(frozen=True)
class Settings:
    """Resolved configuration for one CLI invocation."""

    values: Mapping[str, Any]
    model: ModelConfig
    text: TextConfig
    train: TrainConfig
    prompt: PromptSpec
    profiler: ProfilerSettings
    synth: SynthConfig

    def __post_init__(self) -> None:
        for name in ("gradcheck_coords", "benchmark_reps", "entropy_limit"):
            if int(self.values[name]) < 1:
                raise ConfigError(f"{name} must be positive")

    @property
    def seed(self) -> int:
        return int(self.values["seed"])

    @property
    def threads(self) -> int:
        requested = int(self.values["threads"])
        return requested if requested > 0 else (os.cpu_count() or 1)

    @property
    def data_dir(self) -> Path:
        return Path(self.values["data_dir"])

    @property
    def run_dir(self) -> Path:
        return Path(self.values["run_dir"])

    @property
    def behaviors_file(self) -> Optional[Path]:
        return _optional_path(self.values["behaviors_file"])

    @property
    def out(self) -> Optional[Path]:
        return _optional_path(self.values["out"])

    @property
    def stores_dir(self) -> Optional[Path]:
        return _optional_path(self.values["stores_dir"])

    @property
    def scores_file(self) -> Optional[Path]:
        return _optional_path(self.values["scores_file"])


def _optional_path(value: Any) -> Optional[Path]:
    return Path(value) if value not in (None, "") else None


def default_values() -> Dict[str, Any]:
    return {name: key.default for name, key in CONFIG_KEYS.items()}


def parse_config_text(text: str, *, source: str = "<config>") -> Dict[str, str]:
    """Parse ``key=value`` lines, skipping blanks and ``#`` comments."""

    raw: Dict[str, str] = {}
    for number, line in enumerate(text.splitlines(), start=1):
        cleaned = line.strip()
        if not cleaned or cleaned.startswith("#"):
            continue
        if "=" not in cleaned:
            raise ConfigError(f"{source}:{number}: expected key=value, got {cleaned!r}")
        key, value = cleaned.split("=", 1)
        raw[key.strip()] = value.strip()
    return raw


def read_config_file(path: str | Path) -> Dict[str, str]:
    file_path = Path(path)
    if not file_path.exists():
        raise ConfigError(f"config file not found: {file_path}")
    return parse_config_text(file_path.read_text(encoding="utf-8"), source=str(file_path))


def coerce_values(raw: Mapping[str, Any]) -> Dict[str, Any]:
    """Validate key names and convert string values to their declared types."""

    values: Dict[str, Any] = {}
    for name, value in raw.items():
        key = CONFIG_KEYS.get(name)
        if key is None:
            raise ConfigError(f"undocumented config key: {name}")
        if isinstance(value, str):
            try:
                value = key.kind(value)
            except ValueError as exc:
                raise ConfigError(f"invalid value for {name}: {value!r}") from exc
        values[name] = value
    return values


def resolve_values(layers: Iterable[Mapping[str, Any]]) -> Dict[str, Any]:
    values = default_values()
    for layer in layers:
        values.update(coerce_values(layer))
    return values


def session_token_need(text: TextConfig, ablation: AblationFlags) -> int:
    """
    Tokens of the longest session a user can produce when every title and
    abstract reaches its cap and categories are one word. Each content adds
    its template labels and an SOS/EOS pair.
    """

    labels = sum(len(split_words(label)) for label in TEMPLATES[text.schema])
    per_item = text.title_max_tokens + text.abstract_max_tokens + labels + 1 + 2
    summary = 0 if ablation.no_summary else text.summary_max_tokens + 2
    if ablation.summary_only:
        return summary
    items = 1 if ablation.no_sessions else min(text.session_size, text.history_cap)
    return max(items * per_item, summary)


def _check_session_capacity(text: TextConfig, model: ModelConfig) -> None:
    need = session_token_need(text, model.ablation)
    limit = model.encoder.max_session_tokens
    if need > limit:
        raise ConfigError(
            f"a full session needs up to {need} tokens but max_session_tokens={limit}; "
            "raise max_session_tokens or lower session_size or the title/abstract caps"
        )


def build_settings(values: Mapping[str, Any]) -> Settings:
    """Turn a full value map into typed, validated dataclasses."""

    v = dict(values)
    d = int(v["model_dim"])
    encoder = EncoderConfig(
        layers=v["layers"],
        heads=v["heads"],
        model_dim=d,
        ffn_dim=v["ffn_dim"],
        max_session_tokens=v["max_session_tokens"],
        vocab_size=v["vocab_size"],
        dropout=v["dropout"],
    )
    ablation = AblationFlags(
        **{name: bool(v[name]) for name in AblationFlags.__dataclass_fields__}
    )
    uhs_codes = v["uhs_codes"] or v["history_cap"]
    if ablation.summary_only:
        uhs_codes = 1
    model = ModelConfig(
        encoder=encoder,
        code_dim=v["code_dim"] or max(1, d // 2),
        uhs_codes=uhs_codes,
        user_codes=v["user_codes"],
        candidate_codes=v["candidate_codes"],
        rep_dim=v["rep_dim"] or d,
        window=v["window"],
        random_ratio=v["random_ratio"],
        init_std=v["init_std"],
        ablation=ablation,
    )
    text = TextConfig(
        schema=v["schema"],
        vocab_size=v["vocab_size"],
        title_max_tokens=v["title_max_tokens"],
        abstract_max_tokens=v["abstract_max_tokens"],
        summary_max_tokens=v["summary_max_tokens"],
        history_cap=v["history_cap"],
        session_size=v["session_size"],
    )
    train = TrainConfig(
        epochs=v["epochs"],
        batch_size=v["batch_size"],
        base_lr=v["base_lr"],
        new_layer_lr_multiplier=v["new_layer_lr_multiplier"],
        warmup_fraction=v["warmup_fraction"],
        eval_every_steps=v["eval_every_steps"],
        negatives=v["negatives"],
        dev_fraction=v["dev_fraction"],
        seed=v["seed"],
    )
    prompt = PromptSpec(
        max_items=v["prompt_max_items"],
        max_words_per_abstract=v["prompt_max_words"],
        sentence_budget=v["summary_sentences"],
        schema=v["schema"],
    )
    profiler = ProfilerSettings(
        backend=v["profiler_backend"],
        max_tokens=v["profiler_max_tokens"],
        timeout=v["profiler_timeout"],
        retries=v["profiler_retries"],
        max_in_flight=v["profiler_max_in_flight"],
    )
    _check_session_capacity(text, model)
    synth = SynthConfig(
        n_users=v["synth_users"],
        n_items=v["synth_items"],
        n_categories=v["synth_categories"],
        history_len=v["synth_history"],
        candidates_per_impression=v["synth_candidates"],
        impressions_per_user=v["synth_impressions"],
        label_noise=v["synth_label_noise"],
        seed=v["seed"],
    )
    return Settings(
        values=v, model=model, text=text, train=train, prompt=prompt, profiler=profiler, synth=synth
    )


def load_settings(
    config_path: Optional[str | Path] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    *,
    base_path: Optional[str | Path] = None,
) -> Settings:
    """
    Resolve settings from defaults, an optional run snapshot, an optional
    config file and explicit overrides, in that order.
    """

    layers = []
    if base_path is not None and Path(base_path).exists():
        layers.append(read_config_file(base_path))
    if config_path is not None:
        layers.append(read_config_file(config_path))
    if overrides:
        layers.append(overrides)
    return build_settings(resolve_values(layers))


def dump_config_text(values: Mapping[str, Any]) -> str:
    """Run snapshot text; per-invocation path keys are left out."""

    lines = []
    for name in CONFIG_KEYS:
        if name in INVOCATION_KEYS:
            continue
        value = values[name]
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{name}={value}")
    return "\n".join(lines) + "\n"


def describe_keys() -> str:
    """One line per documented key, for ``--help``."""

    return "\n".join(
        f"  {key.name}={key.default!s:<8} {key.help}" for key in CONFIG_KEYS.values()
    )


def load_profiler_settings(
    base: ProfilerSettings, env_file: Optional[Path] = DEFAULT_ENV_FILE
) -> ProfilerSettings:
    """
    Fill in the summary service endpoint and bearer token from the environment.

    A local .env file is parsed first (only if it exists) so the variables can
    live next to the project instead of the shell profile.
    """

    _load_env_file(env_file)
    if base.backend == "stub":
        return base
    if base.backend != "http":
        raise ConfigError(f"unknown profiler_backend: {base.backend}")

    endpoint = os.getenv(PROFILER_URL_ENV_VAR)
    token = os.getenv(PROFILER_TOKEN_ENV_VAR)
    if not endpoint or not token:
        raise ConfigError(
            f"{PROFILER_URL_ENV_VAR} and {PROFILER_TOKEN_ENV_VAR} must be set "
            "for the http profiler backend."
        )
    return ProfilerSettings(
        backend=base.backend,
        endpoint=endpoint.strip(),
        token=token.strip(),
        max_tokens=base.max_tokens,
        timeout=base.timeout,
        retries=base.retries,
        max_in_flight=base.max_in_flight,
    )


def _load_env_file(env_file: Optional[Path]) -> None:
    if not env_file:
        return

    path = Path(env_file)
    if not path.exists():
        return

    for key, value in parse_config_text(path.read_text(encoding="utf-8"), source=str(path)).items():
        os.environ.setdefault(key, value)


__all__ = [
    "AblationFlags",
    "CONFIG_KEYS",
    "EncoderConfig",
    "INVOCATION_KEYS",
    "ModelConfig",
    "PROFILER_TOKEN_ENV_VAR",
    "PROFILER_URL_ENV_VAR",
    "ProfilerSettings",
    "PromptSpec",
    "Settings",
    "SynthConfig",
    "TextConfig",
    "TrainConfig",
    "build_settings",
    "describe_keys",
    "dump_config_text",
    "load_profiler_settings",
    "load_settings",
    "parse_config_text",
    "read_config_file",
    "resolve_values",
    "session_token_need",
]
