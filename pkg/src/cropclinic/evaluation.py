"""LLM-as-judge evaluation: per-sample SC/IC scoring against gold
references, per-task averaging, and the overall normalized score.

Each sample is judged once with its task's rubric; the judge must reply
with exactly two named numeric fields in [0, 1], semantic_consistency and
information_completeness. Parsing is strict with up to 2 re-asks; a
sample that still fails is marked invalid and excluded from the means.

Task score = (mean SC + mean IC) / 2; overall = arithmetic mean of the
task scores over tasks present in the dataset.

Dataset file: line-delimited JSON records {id, task, query, image_ref?,
gold_reference}. Precomputed outputs: `id<TAB>model_output` lines.
"""

from __future__ import annotations

import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

from .core import DataError, FormatError, Intent
from .fusion import ChatClient, TransportError


@dataclass(frozen=True)
class EvalSample:
    id: str
    task: Intent
    query: str
    gold_reference: str
    image_ref: Optional[str] = None
    model_output: Optional[str] = None

    def __post_init__(self):
        if not self.gold_reference:
            raise DataError(f"sample {self.id}: gold_reference must be non-empty")


@dataclass(frozen=True)
class JudgeScore:
    sc: float
    ic: float

    def __post_init__(self):
        if not (0.0 <= self.sc <= 1.0 and 0.0 <= self.ic <= 1.0):
            raise DataError(f"judge scores out of [0, 1]: sc={self.sc}, ic={self.ic}")


def load_eval_dataset(path: Union[str, Path]) -> list[EvalSample]:
    samples = []
    for lineno, line in enumerate(
        Path(path).read_text(encoding="utf-8").splitlines(), start=1
    ):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            samples.append(EvalSample(
                id=str(record["id"]),
                task=Intent.from_wire(record["task"]),
                query=record["query"],
                gold_reference=record["gold_reference"],
                image_ref=record.get("image_ref"),
            ))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise FormatError(f"{path}:{lineno}: bad eval record: {exc}") from None
    return samples


def load_outputs(path: Union[str, Path]) -> dict[str, str]:
    outputs: dict[str, str] = {}
    for lineno, line in enumerate(
        Path(path).read_text(encoding="utf-8").splitlines(), start=1
    ):
        if not line.strip():
            continue
        sample_id, sep, text = line.partition("\t")
        if not sep:
            raise FormatError(f"{path}:{lineno}: expected `id<TAB>model_output`")
        outputs[sample_id] = text
    return outputs


def load_rubrics(directory: Union[str, Path, None] = None) -> dict[Intent, str]:
    rubrics = {}
    for intent in Intent:
        name = f"rubric_{intent.wire_name}.txt"
        if directory is not None:
            text = (Path(directory) / name).read_text(encoding="utf-8")
        else:
            text = (resources.files("cropclinic") / "templates" / name).read_text(
                encoding="utf-8"
            )
        rubrics[intent] = text
    return rubrics


_FIELD_RE = re.compile(
    r"^\s*(semantic_consistency|information_completeness)\s*[:=]\s*"
    r"([0-9]*\.?[0-9]+)\s*$",
    re.MULTILINE,
)


def parse_judge_reply(text: str) -> JudgeScore:
    """Strict parse: exactly the two named numeric fields, each once,
    either as `name: value` lines or a flat JSON object."""
    values: dict[str, float] = {}
    stripped = text.strip()
    if stripped.startswith("{"):
        try:
            record = json.loads(stripped)
        except json.JSONDecodeError:
            raise FormatError("judge reply is not valid JSON") from None
        if not isinstance(record, dict) or set(record) != {
            "semantic_consistency", "information_completeness",
        }:
            raise FormatError("judge JSON must have exactly the two score fields")
        try:
            values = {k: float(v) for k, v in record.items()}
        except (TypeError, ValueError):
            raise FormatError("judge JSON fields must be numeric") from None
    else:
        for match in _FIELD_RE.finditer(text):
            name, value = match.group(1), float(match.group(2))
            if name in values:
                raise FormatError(f"judge reply repeats field {name}")
            values[name] = value
        if set(values) != {"semantic_consistency", "information_completeness"}:
            raise FormatError("judge reply missing a required score field")
    try:
        return JudgeScore(values["semantic_consistency"],
                          values["information_completeness"])
    except DataError as exc:
        raise FormatError(str(exc)) from None


JudgeFn = Callable[[str], str]  # rubric-filled prompt -> raw judge reply


class StubJudge:
    """Deterministic judge for offline runs: fixed scores for every sample."""

    def __init__(self, sc: float = 0.5, ic: float = 0.5):
        self.sc, self.ic = sc, ic

    def __call__(self, prompt: str) -> str:
        return (f"semantic_consistency: {self.sc}\n"
                f"information_completeness: {self.ic}\n")


class HttpJudge:
    """Judge over the chat-completions contract (temperature 0)."""

    def __init__(self, client: ChatClient):
        self.client = client

    def __call__(self, prompt: str) -> str:
        answer, _ = self.client.complete(
            "You are a strict automatic grader. Follow the instructions exactly.",
            prompt,
        )
        return answer


def fill_rubric(rubric: str, sample: EvalSample, model_output: str) -> str:
    return (
        rubric.replace("{{query}}", sample.query)
        .replace("{{gold_reference}}", sample.gold_reference)
        .replace("{{model_output}}", model_output)
    )


def judge_sample(judge: JudgeFn, sample: EvalSample, rubrics: dict[Intent, str],
                 max_reasks: int = 2) -> Optional[JudgeScore]:
    """One judged sample; None when every ask fails strict parsing."""
    if sample.task not in rubrics:
        raise DataError(f"no rubric for task {sample.task.wire_name}")
    if sample.model_output is None:
        raise DataError(f"sample {sample.id} has no model output to judge")
    prompt = fill_rubric(rubrics[sample.task], sample, sample.model_output)
    for _ in range(max_reasks + 1):
        try:
            reply = judge(prompt)
        except TransportError:
            continue
        try:
            return parse_judge_reply(reply)
        except FormatError:
            continue
    return None


def task_score(mean_sc: float, mean_ic: float) -> float:
    if not (0.0 <= mean_sc <= 1.0 and 0.0 <= mean_ic <= 1.0):
        raise DataError("task means must be in [0, 1]")
    return (mean_sc + mean_ic) / 2.0


def overall_score(task_averages: Sequence[float]) -> float:
    if not task_averages:
        raise DataError("no task averages to aggregate")
    return sum(task_averages) / len(task_averages)


@dataclass
class TaskReport:
    task: Intent
    n_samples: int
    n_valid: int
    mean_sc: float
    mean_ic: float
    average: float


@dataclass
class EvalReport:
    samples: list[tuple[EvalSample, Optional[JudgeScore]]]
    tasks: list[TaskReport]
    overall: float
    invalid_count: int
    missing_tasks: list[Intent] = field(default_factory=list)

    def render_table(self) -> str:
        lines = [
            f"{'task':<24} {'SC':>8} {'IC':>8} {'Avg':>8}  (valid/total)",
        ]
        for t in self.tasks:
            lines.append(
                f"{t.task.wire_name:<24} {t.mean_sc:>8.4f} {t.mean_ic:>8.4f} "
                f"{t.average:>8.4f}  ({t.n_valid}/{t.n_samples})"
            )
        lines.append(f"{'overall':<24} {'':>8} {'':>8} {self.overall:>8.4f}")
        if self.invalid_count:
            lines.append(f"invalid samples: {self.invalid_count}")
        for task in self.missing_tasks:
            lines.append(f"missing task: {task.wire_name}")
        return "\n".join(lines)

    def records(self) -> list[dict]:
        rows = []
        for sample, score in self.samples:
            rows.append({
                "id": sample.id,
                "task": sample.task.wire_name,
                "valid": score is not None,
                "sc": score.sc if score else None,
                "ic": score.ic if score else None,
            })
        for t in self.tasks:
            rows.append({
                "task": t.task.wire_name,
                "mean_sc": t.mean_sc,
                "mean_ic": t.mean_ic,
                "average": t.average,
                "valid": t.n_valid,
                "total": t.n_samples,
            })
        rows.append({"overall": self.overall, "invalid": self.invalid_count})
        return rows


AnswerFn = Callable[[EvalSample], str]


def run_eval(
    dataset: Sequence[EvalSample],
    judge: JudgeFn,
    answer_fn: Optional[AnswerFn] = None,
    outputs: Optional[dict[str, str]] = None,
    rubrics: Optional[dict[Intent, str]] = None,
    parallelism: int = 1,
) -> EvalReport:
    """Answer (pipeline or precomputed), judge, aggregate.

    Judging may run concurrently up to `parallelism`; aggregation is
    order-independent, so the report is identical either way.
    """
    if not dataset:
        raise DataError("evaluation dataset is empty")
    if (answer_fn is None) == (outputs is None):
        raise DataError("provide exactly one of answer_fn or outputs")
    rubrics = rubrics if rubrics is not None else load_rubrics()

    answered: list[EvalSample] = []
    for sample in dataset:
        if outputs is not None:
            if sample.id not in outputs:
                raise DataError(f"no precomputed output for sample {sample.id}")
            text = outputs[sample.id]
        else:
            text = answer_fn(sample)
        answered.append(EvalSample(
            id=sample.id, task=sample.task, query=sample.query,
            gold_reference=sample.gold_reference, image_ref=sample.image_ref,
            model_output=text,
        ))

    def _judge_one(sample: EvalSample) -> Optional[JudgeScore]:
        return judge_sample(judge, sample, rubrics)

    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            scores = list(pool.map(_judge_one, answered))
    else:
        scores = [_judge_one(s) for s in answered]

    pairs = list(zip(answered, scores))
    invalid = sum(1 for _, score in pairs if score is None)
    if invalid == len(pairs):
        raise DataError("every sample failed judging; nothing to aggregate")

    tasks: list[TaskReport] = []
    for task in Intent:
        group = [(s, sc) for s, sc in pairs if s.task is task]
        if not group:
            continue
        valid = [score for _, score in group if score is not None]
        if not valid:
            tasks.append(TaskReport(task, len(group), 0, 0.0, 0.0, 0.0))
            continue
        mean_sc = sum(v.sc for v in valid) / len(valid)
        mean_ic = sum(v.ic for v in valid) / len(valid)
        tasks.append(TaskReport(
            task, len(group), len(valid), mean_sc, mean_ic,
            task_score(mean_sc, mean_ic),
        ))

    present = {t.task for t in tasks}
    report = EvalReport(
        samples=pairs,
        tasks=tasks,
        overall=overall_score([t.average for t in tasks if t.n_valid > 0]),
        invalid_count=invalid,
        missing_tasks=[i for i in Intent if i not in present],
    )
    return report
