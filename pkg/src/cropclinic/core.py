"""Shared domain types, intent taxonomy, configuration, and errors.

Everything here is an immutable value type once constructed, safe to
share across concurrent request handlers.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Optional, Union


class ClinicError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(ClinicError):
    """Configuration file missing, malformed, or violating an invariant."""


class FormatError(ClinicError):
    """A file or wire payload does not match its documented format."""


class DataError(ClinicError):
    """A dataset, corpus, or knowledge base violates its invariants."""


class Intent(enum.IntEnum):
    """The three task categories queries are routed into. Ids are a wire
    contract: every serialized artifact (corpora, eval sets) uses them."""

    KNOWLEDGE_RETRIEVAL = 0
    DISEASE_CLASSIFICATION = 1
    DISEASE_DETECTION = 2

    @property
    def wire_name(self) -> str:
        return self.name.lower()

    @classmethod
    def from_wire(cls, name: str) -> "Intent":
        try:
            return cls[name.upper()]
        except KeyError:
            raise DataError(f"unknown intent name: {name!r}") from None

    @classmethod
    def from_id(cls, intent_id: int) -> "Intent":
        try:
            return cls(intent_id)
        except ValueError:
            raise DataError(f"unknown intent id: {intent_id}") from None


class Language(str, enum.Enum):
    EN = "en"
    ZH = "zh"

    @classmethod
    def from_code(cls, code: str) -> "Language":
        try:
            return cls(code)
        except ValueError:
            raise DataError(f"unsupported language code: {code!r}") from None


# CJK Unified Ideographs (main block + extension A); shared by language
# detection and the zh tokenizer.
_CJK_RANGES = ((0x4E00, 0x9FFF), (0x3400, 0x4DBF))


def is_cjk(ch: str) -> bool:
    cp = ord(ch)
    return any(lo <= cp <= hi for lo, hi in _CJK_RANGES)


# Fixed intent -> tool mapping used by routing and the pipeline.
TOOL_FOR_INTENT = {
    Intent.KNOWLEDGE_RETRIEVAL: "retrieve",
    Intent.DISEASE_CLASSIFICATION: "classify",
    Intent.DISEASE_DETECTION: "detect",
}

IMAGE_REQUIRED_INTENTS = frozenset(
    {Intent.DISEASE_CLASSIFICATION, Intent.DISEASE_DETECTION}
)


@dataclass(frozen=True)
class ImageRef:
    """Reference to a query image: an opaque id/path and/or raw bytes.

    Dimensions are always known when an image is present; the detection
    response needs them to report pixel corners.
    """

    ref: Optional[str] = None
    data: Optional[bytes] = None
    width: int = 0
    height: int = 0

    def __post_init__(self):
        if self.ref is None and self.data is None:
            raise DataError("ImageRef needs a ref or raw bytes")
        if self.width <= 0 or self.height <= 0:
            raise DataError("image dimensions must be positive")


@dataclass(frozen=True)
class Query:
    id: str
    text: str
    image: Optional[ImageRef] = None
    timestamp: float = field(default_factory=time.time)

    def __post_init__(self):
        if not self.text and self.image is None:
            raise DataError("query text may be empty only when an image is present")


@dataclass
class TraceEvent:
    stage: str
    start: float
    end: float
    payload: dict = field(default_factory=dict)

    def as_record(self) -> dict:
        return {
            "stage": self.stage,
            "start": self.start,
            "end": self.end,
            "payload": self.payload,
        }


class Trace:
    """Ordered stage log for one query. Appended by pipeline stages."""

    def __init__(self):
        self.events: list[TraceEvent] = []

    def add(self, stage: str, start: float, end: float, **payload: Any) -> None:
        self.events.append(TraceEvent(stage, start, end, dict(payload)))

    def tool_invocations(self) -> list[TraceEvent]:
        return [e for e in self.events if e.stage == "tool"]


TOOL_KINDS = ("classify", "detect", "retrieve")


@dataclass(frozen=True)
class ToolOutput:
    """Tagged union of the three tool results; exactly one variant."""

    kind: str
    value: Any

    def __post_init__(self):
        if self.kind not in TOOL_KINDS:
            raise DataError(f"unknown tool kind: {self.kind!r}")
        if self.value is None:
            raise DataError("tool output value must be populated")


@dataclass
class AgentResponse:
    answer: str
    routing: Any  # RoutingDecision; typed loosely to avoid a module cycle
    tool_output: Optional[ToolOutput]
    trace: list[TraceEvent]


_DEFAULT_ROUTER_DIM = 1 << 18


@dataclass(frozen=True)
class EngineConfig:
    # model / data file paths (resolved relative to the config file)
    router_model_en: Optional[str] = None
    router_model_zh: Optional[str] = None
    head_model: Optional[str] = None
    feature_file: Optional[str] = None
    category_names: Optional[str] = None
    kb_file: Optional[str] = None
    index_file: Optional[str] = None
    predictions_file: Optional[str] = None
    templates_dir: Optional[str] = None
    # numeric knobs
    retrieval_k: int = 3
    cjk_threshold: float = 0.30
    embed_dim: int = 256
    router_dim: int = _DEFAULT_ROUTER_DIM
    class_weight_cap: float = 10.0
    seed: int = 0
    # outbound LLM / judge endpoints
    llm_endpoint: Optional[str] = None
    llm_model: str = "default"
    llm_token_env: str = "CROPCLINIC_LLM_TOKEN"
    llm_timeout_ms: int = 10_000
    llm_max_retries: int = 2
    judge_endpoint: Optional[str] = None
    judge_model: str = "default"
    judge_token_env: str = "CROPCLINIC_JUDGE_TOKEN"
    judge_timeout_ms: int = 30_000
    judge_max_retries: int = 2
    # service
    admin_token_env: str = "CROPCLINIC_ADMIN_TOKEN"
    max_image_bytes: int = 8 * 1024 * 1024
    trace_ring: int = 1024
    max_in_flight: int = 32


_PATH_KEYS = {
    "router_model_en", "router_model_zh", "head_model", "feature_file",
    "category_names", "kb_file", "index_file", "predictions_file",
    "templates_dir",
}
_STR_KEYS = {
    "llm_endpoint", "llm_model", "llm_token_env",
    "judge_endpoint", "judge_model", "judge_token_env", "admin_token_env",
}
_INT_KEYS = {
    "retrieval_k", "embed_dim", "router_dim", "seed",
    "llm_timeout_ms", "llm_max_retries", "judge_timeout_ms",
    "judge_max_retries", "max_image_bytes", "trace_ring", "max_in_flight",
}
_FLOAT_KEYS = {"cjk_threshold", "class_weight_cap"}


def _validate_config(cfg: EngineConfig) -> None:
    if cfg.retrieval_k < 1:
        raise ConfigError("retrieval_k must be ≥ 1")
    if not (0.0 < cfg.cjk_threshold < 1.0):
        raise ConfigError("cjk_threshold must be in (0, 1)")
    if cfg.embed_dim < 2:
        raise ConfigError("embed_dim must be ≥ 2")
    if cfg.router_dim < 2:
        raise ConfigError("router_dim must be ≥ 2")
    if cfg.class_weight_cap < 1.0:
        raise ConfigError("class_weight_cap must be ≥ 1")
    if cfg.llm_timeout_ms <= 0:
        raise ConfigError("llm_timeout_ms must be > 0")
    if cfg.judge_timeout_ms <= 0:
        raise ConfigError("judge_timeout_ms must be > 0")
    if cfg.llm_max_retries < 0:
        raise ConfigError("llm_max_retries must be ≥ 0")
    if cfg.judge_max_retries < 0:
        raise ConfigError("judge_max_retries must be ≥ 0")
    if cfg.max_image_bytes < 1:
        raise ConfigError("max_image_bytes must be ≥ 1")
    if cfg.trace_ring < 1:
        raise ConfigError("trace_ring must be ≥ 1")
    if cfg.max_in_flight < 1:
        raise ConfigError("max_in_flight must be ≥ 1")


def parse_config(text: str, base_dir: Optional[Path] = None) -> EngineConfig:
    """Parse the flat `key = value` configuration format.

    Lines starting with # and blank lines are ignored. Unknown keys are
    rejected so typos fail loudly. Path values are resolved against
    base_dir when given.
    """
    values: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected `key = value`, got {line!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key in _INT_KEYS:
            try:
                values[key] = int(value)
            except ValueError:
                raise ConfigError(f"{key} must be an integer, got {value!r}") from None
        elif key in _FLOAT_KEYS:
            try:
                values[key] = float(value)
            except ValueError:
                raise ConfigError(f"{key} must be a number, got {value!r}") from None
        elif key in _PATH_KEYS:
            p = Path(value)
            if base_dir is not None and not p.is_absolute():
                p = base_dir / p
            values[key] = str(p)
        elif key in _STR_KEYS:
            values[key] = value
        else:
            raise ConfigError(f"unknown configuration key: {key!r}")
    cfg = EngineConfig(**values)
    _validate_config(cfg)
    return cfg


def load_config(path: Union[str, Path]) -> EngineConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    return parse_config(text, base_dir=path.parent)


def with_overrides(cfg: EngineConfig, **kwargs: Any) -> EngineConfig:
    out = replace(cfg, **kwargs)
    _validate_config(out)
    return out
