"""Prompt-level output fusion and the chat-completions client.

Exactly one tool result is folded into a structured prompt together with
the original user text; a pluggable HTTP chat client produces the final
answer, and a deterministic fallback renderer guarantees an answer when
no client is configured or every retry fails.

Outbound HTTP contract: POST {endpoint} with JSON
    {"model": ..., "messages": [{"role": "system"|"user", "content": ...}],
     "temperature": 0}
expecting {"choices": [{"message": {"content": ...}}]}; bearer auth token
read from the configured environment variable.

Template files are external (UTF-8, placeholders {{user_text}} and
{{tool_section}}); the shipped bilingual set lives in
cropclinic/templates. The prompt wording is original to this project.
"""

from __future__ import annotations

import json
import os
import urllib.error
import urllib.request
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

from .classify import ClassPrediction
from .core import DataError, EngineConfig, Language, Query, ToolOutput
from .detect import DetectionResult, to_corners
from .retrieve import RetrievedContext


@dataclass(frozen=True)
class PromptTemplates:
    system: dict[Language, str]
    user: dict[Language, str]

    def __post_init__(self):
        for lang in Language:
            for part, table in (("system", self.system), ("user", self.user)):
                if lang not in table:
                    raise DataError(f"missing {part} template for {lang.value}")


def _read_template(directory: Optional[Path], name: str) -> str:
    if directory is not None:
        return (directory / name).read_text(encoding="utf-8")
    return (resources.files("cropclinic") / "templates" / name).read_text(
        encoding="utf-8"
    )


def load_templates(directory: Union[str, Path, None] = None) -> PromptTemplates:
    directory = Path(directory) if directory is not None else None
    return PromptTemplates(
        system={
            lang: _read_template(directory, f"fusion_system_{lang.value}.txt")
            for lang in Language
        },
        user={
            lang: _read_template(directory, f"fusion_user_{lang.value}.txt")
            for lang in Language
        },
    )


@dataclass(frozen=True)
class FusionPrompt:
    system: str
    user: str
    tool_section: str
    tool_name: str
    language: Language
    fallback_text: str  # deterministic answer used when no LLM responds


def render_tool_section(query: Query, output: ToolOutput,
                        category_names: Optional[Sequence[str]] = None) -> str:
    """Deterministic structured rendering of one tool result."""
    if output.kind == "classify":
        pred: ClassPrediction = output.value
        lines = [
            "tool: disease classifier",
            f"predicted category: {pred.name} (id {pred.label})",
            "top probabilities:",
        ]
        for idx, prob in pred.top(3):
            name = _category_name(idx, pred, category_names)
            lines.append(f"  - {name}: {prob:.4f}")
        return "\n".join(lines)
    if output.kind == "detect":
        result: DetectionResult = output.value
        lines = [
            "tool: lesion detector",
            f"image: {result.image_id or '(uploaded)'}",
        ]
        if result.no_predictions:
            lines.append("no stored predictions for this image")
        elif not result.boxes:
            lines.append("no lesion regions detected")
        else:
            lines.append("regions:")
            for i, box in enumerate(result.boxes, start=1):
                corners = _pixel_corners(query, box)
                name = (category_names[box.category]
                        if category_names and box.category < len(category_names)
                        else f"category {box.category}")
                lines.append(
                    f"  {i}. {name}, confidence {box.confidence:.4f}, "
                    f"pixel corners ({corners[0]:.1f}, {corners[1]:.1f}, "
                    f"{corners[2]:.1f}, {corners[3]:.1f})"
                )
        return "\n".join(lines)
    context: RetrievedContext = output.value
    lines = ["tool: knowledge retriever"]
    for rank, (entry, (entry_id, dist)) in enumerate(
        zip(context.entries, context.hits), start=1
    ):
        lines.append(f"[{rank}] {entry.name} (entry {entry_id}, distance {dist:.6f})")
        for title, body in entry.sections:
            lines.append(f"{title}:")
            lines.append(body)
    return "\n".join(lines)


def _category_name(idx: int, pred: ClassPrediction,
                   category_names: Optional[Sequence[str]]) -> str:
    if category_names and idx < len(category_names):
        return category_names[idx]
    if idx == pred.label:
        return pred.name
    return f"category {idx}"


def _pixel_corners(query: Query, box) -> tuple[float, float, float, float]:
    if query.image is not None:
        return to_corners(box, query.image.width, query.image.height)
    return box.unit_corners()


def build_fusion_prompt(query: Query, routing, output: ToolOutput,
                        templates: PromptTemplates,
                        category_names: Optional[Sequence[str]] = None) -> FusionPrompt:
    """Fill the language's templates with the user text and the rendered
    tool section. The output variant must match the routing target."""
    if output.kind != routing.target_tool:
        raise DataError(
            f"tool output {output.kind!r} does not match routing target "
            f"{routing.target_tool!r}"
        )
    language = routing.language
    section = render_tool_section(query, output, category_names)
    user = (
        templates.user[language]
        .replace("{{user_text}}", query.text)
        .replace("{{tool_section}}", section)
    )
    return FusionPrompt(
        system=templates.system[language],
        user=user,
        tool_section=section,
        tool_name=output.kind,
        language=language,
        fallback_text=fallback_answer(query, output, language, category_names),
    )


def fallback_answer(query: Query, output: ToolOutput, language: Language,
                    category_names: Optional[Sequence[str]] = None) -> str:
    """Deterministic natural-language summary of the tool result. Pure
    function of its inputs; guarantees the pipeline always answers."""
    zh = language is Language.ZH
    if output.kind == "classify":
        pred: ClassPrediction = output.value
        confidence = pred.probabilities[pred.label]
        others = [
            f"{_category_name(i, pred, category_names)} ({p:.1%})"
            for i, p in pred.top(3)[1:]
            if p > 0.0
        ]
        if zh:
            answer = f"诊断结果:{pred.name}(置信度 {confidence:.1%})。"
            if others:
                answer += "其他可能:" + "、".join(others) + "。"
        else:
            answer = f"Diagnosis: {pred.name} (confidence {confidence:.1%})."
            if others:
                answer += " Other possibilities: " + ", ".join(others) + "."
        return answer
    if output.kind == "detect":
        result: DetectionResult = output.value
        if result.no_predictions or not result.boxes:
            return ("未在该图片中检测到病斑区域。" if zh
                    else "No lesion regions were detected in this image.")
        parts = []
        for i, box in enumerate(result.boxes, start=1):
            x0, y0, x1, y1 = _pixel_corners(query, box)
            name = (category_names[box.category]
                    if category_names and box.category < len(category_names)
                    else (f"类别 {box.category}" if zh else f"category {box.category}"))
            if zh:
                parts.append(
                    f"{i}. {name},置信度 {box.confidence:.1%},"
                    f"像素区域 ({x0:.0f}, {y0:.0f})-({x1:.0f}, {y1:.0f})"
                )
            else:
                parts.append(
                    f"{i}. {name} at pixels ({x0:.0f}, {y0:.0f})-({x1:.0f}, {y1:.0f}), "
                    f"confidence {box.confidence:.1%}"
                )
        if zh:
            return f"共检测到 {len(result.boxes)} 处病斑区域:" + ";".join(parts) + "。"
        plural = "s" if len(result.boxes) != 1 else ""
        return f"Detected {len(result.boxes)} affected region{plural}: " + "; ".join(parts) + "."
    context: RetrievedContext = output.value
    if not context.entries:
        return ("知识库中没有找到相关条目。" if zh
                else "No matching knowledge base entries were found.")
    top = context.entries[0]
    picked = [
        (title, body)
        for title, body in top.sections
        if title in ("Introduction", "Symptoms", "Control Measures")
    ] or list(top.sections[:2])
    if zh:
        body = " ".join(body for _, body in picked)
        return f"根据知识库条目《{top.name}》:{body}"
    body = " ".join(body for _, body in picked)
    return f"According to the knowledge base entry '{top.name}': {body}"


@dataclass(frozen=True)
class LlmClientConfig:
    endpoint: str
    model: str = "default"
    token_env: str = "CROPCLINIC_LLM_TOKEN"
    timeout_ms: int = 10_000
    max_retries: int = 2

    def __post_init__(self):
        if self.timeout_ms <= 0:
            raise DataError("timeout_ms must be > 0")
        if self.max_retries < 0:
            raise DataError("max_retries must be >= 0")


class TransportError(Exception):
    """Raised by transports on any delivery failure."""


Transport = Callable[[str, bytes, dict, float], bytes]


def _urllib_transport(url: str, body: bytes, headers: dict, timeout_s: float) -> bytes:
    request = urllib.request.Request(url, data=body, headers=headers, method="POST")
    try:
        with urllib.request.urlopen(request, timeout=timeout_s) as response:
            return response.read()
    except (urllib.error.URLError, OSError) as exc:
        raise TransportError(str(exc)) from exc


class ChatClient:
    """Minimal chat-completions client with bounded retries."""

    def __init__(self, config: LlmClientConfig, transport: Optional[Transport] = None):
        self.config = config
        self.transport = transport or _urllib_transport

    def complete(self, system: str, user: str) -> tuple[str, int]:
        """Returns (answer, retries_used); raises TransportError when the
        retry budget is exhausted or the reply is unparseable."""
        payload = json.dumps({
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
            "temperature": 0,
        }).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.config.token_env, "")
        if token:
            headers["Authorization"] = f"Bearer {token}"
        last: Optional[Exception] = None
        for attempt in range(self.config.max_retries + 1):
            try:
                raw = self.transport(
                    self.config.endpoint, payload, headers,
                    self.config.timeout_ms / 1000.0,
                )
                return _parse_chat_reply(raw), attempt
            except TransportError as exc:
                last = exc
        raise TransportError(f"retries exhausted: {last}")


def _parse_chat_reply(raw: bytes) -> str:
    try:
        reply = json.loads(raw.decode("utf-8"))
        content = reply["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise TransportError(f"malformed chat completion reply: {exc}") from None
    if not isinstance(content, str):
        raise TransportError("chat completion content is not a string")
    return content


def make_llm_client(config: EngineConfig,
                    transport: Optional[Transport] = None) -> Optional[ChatClient]:
    if not config.llm_endpoint:
        return None
    return ChatClient(
        LlmClientConfig(
            endpoint=config.llm_endpoint,
            model=config.llm_model,
            token_env=config.llm_token_env,
            timeout_ms=config.llm_timeout_ms,
            max_retries=config.llm_max_retries,
        ),
        transport,
    )


@dataclass
class FusionOutcome:
    answer: str
    mode: str  # "llm" or "fallback"
    retries: int = 0
    degraded: bool = False  # True when an LLM was configured but never answered
    error: Optional[str] = None


def generate_response(client: Optional[ChatClient], prompt: FusionPrompt) -> FusionOutcome:
    """One chat call with bounded retries, else the deterministic fallback.
    Never raises: the fallback guarantees a non-empty answer."""
    if client is None:
        return FusionOutcome(prompt.fallback_text, "fallback")
    try:
        answer, retries = client.complete(prompt.system, prompt.user)
    except TransportError as exc:
        return FusionOutcome(
            prompt.fallback_text, "fallback",
            retries=client.config.max_retries, degraded=True, error=str(exc),
        )
    if not answer.strip():
        return FusionOutcome(
            prompt.fallback_text, "fallback",
            retries=retries, degraded=True, error="empty completion",
        )
    return FusionOutcome(answer, "llm", retries=retries)
