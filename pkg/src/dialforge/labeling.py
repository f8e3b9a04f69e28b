"""Weighted scene/task sampling, automatic label production, and label judging.

Sampling draws (dialogue, instruction) pairs cell by cell, where a cell is a
(scene, task type) combination with a nonnegative weight.  Labels come from a
chat provider (or a cassette replay for deterministic builds) and are then
classified high/medium/low by a rubric-driven judge.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
import re
from dataclasses import dataclass, replace
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Sequence

from .assembly import AssembledPrompt, TemplateRegistry, assemble, restructure
from .corpus import Dialogue, Scene, TaskType
from .errors import DialforgeError, InfeasiblePlanError, ValidationError
from .evolution import InstructionRecord, LifecycleState
from .providers import ChatClient, ChatRequest

logger = logging.getLogger(__name__)

# Fraction of provider failures a labeling run tolerates before aborting.
FAILURE_BUDGET = 0.10


class JudgeClass(str, Enum):
    HIGH = "high"
    MEDIUM = "medium"
    LOW = "low"


Cell = tuple[Scene, TaskType]


@dataclass
class SamplingPlan:
    weights: dict[Cell, float]
    target_count: int
    seed: int
    with_replacement: bool = False

    def __post_init__(self):
        if self.target_count <= 0:
            raise ValidationError("target_count must be positive")
        positive = [w for w in self.weights.values() if w > 0]
        if not positive:
            raise ValidationError("at least one sampling weight must be positive")
        for cell, w in self.weights.items():
            if w < 0 or w != w or w in (float("inf"), float("-inf")):
                raise ValidationError(f"weight for {cell} must be finite and >= 0")


@dataclass
class LabeledSample:
    id: str
    prompt_id: str
    dialogue_id: str
    task_type: TaskType
    label_text: str
    prompt_text: str = ""
    judge_class: JudgeClass | None = None
    judge_flag: str = ""  # e.g. "unparseable-judge-output"
    dataset_version: str = ""

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "prompt_id": self.prompt_id,
            "dialogue_id": self.dialogue_id,
            "task_type": self.task_type.value,
            "label_text": self.label_text,
            "prompt_text": self.prompt_text,
            "judge_class": self.judge_class.value if self.judge_class else None,
            "judge_flag": self.judge_flag,
            "dataset_version": self.dataset_version,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "LabeledSample":
        return cls(
            id=rec["id"],
            prompt_id=rec["prompt_id"],
            dialogue_id=rec["dialogue_id"],
            task_type=TaskType(rec["task_type"]),
            label_text=rec["label_text"],
            prompt_text=rec.get("prompt_text", ""),
            judge_class=JudgeClass(rec["judge_class"]) if rec.get("judge_class") else None,
            judge_flag=rec.get("judge_flag", ""),
            dataset_version=rec.get("dataset_version", ""),
        )


def cell_name(cell: Cell) -> str:
    return f"{cell[0].value}|{cell[1].value}"


def parse_cell(name: str) -> Cell:
    scene_str, _, task_str = name.partition("|")
    return (Scene(scene_str), TaskType(task_str))


def draw_sample_plan(
    corpus: Sequence[Dialogue],
    instructions: Sequence[InstructionRecord],
    plan: SamplingPlan,
) -> list[tuple[Dialogue, InstructionRecord]]:
    """Draw (dialogue, instruction) pairs per the plan's cell weights.

    Deterministic under the plan's seed.  A cell is drawn with probability
    proportional to its weight, then a pair is picked uniformly inside the
    cell.  Without replacement, a pair is never drawn twice.
    """
    approved = [r for r in instructions if r.state == LifecycleState.APPROVED]
    cells = sorted((c for c, w in plan.weights.items() if w > 0), key=cell_name)
    pools: dict[Cell, list[tuple[Dialogue, InstructionRecord]]] = {}
    for cell in cells:
        scene, task = cell
        dialogues = [d for d in corpus if d.scene == scene]
        records = [r for r in approved if r.scene == scene and r.task_type == task]
        if not dialogues or not records:
            missing = "dialogues" if not dialogues else "approved instructions"
            raise InfeasiblePlanError(
                f"sampling cell {cell_name(cell)} has no eligible {missing}"
            )
        pools[cell] = [(d, r) for d in dialogues for r in records]
    if not plan.with_replacement:
        available = sum(len(p) for p in pools.values())
        if plan.target_count > available:
            raise InfeasiblePlanError(
                f"target_count {plan.target_count} exceeds {available} available pairs "
                "without replacement"
            )
    rng = random.Random(plan.seed)
    weights = [plan.weights[c] for c in cells]
    drawn: list[tuple[Dialogue, InstructionRecord]] = []
    while len(drawn) < plan.target_count:
        live = [i for i, c in enumerate(cells) if pools[c]]
        if not live:
            raise InfeasiblePlanError("all sampling cells exhausted before target_count")
        idx = rng.choices(live, weights=[weights[i] for i in live], k=1)[0]
        pool = pools[cells[idx]]
        pick = rng.randrange(len(pool))
        pair = pool[pick]
        if not plan.with_replacement:
            pool.pop(pick)
        drawn.append(pair)
    return drawn


# ---------------------------------------------------------------------------
# Label generation

LABEL_SYSTEM = "你是一名资深的房产服务对话分析助手。请严格按照提示词中的任务与格式要求作答。"


@dataclass(frozen=True)
class LabelFailure:
    index: int
    dialogue_id: str
    instruction_id: str
    error: str


def label_prompts(
    entries: Sequence[tuple[AssembledPrompt, TaskType]],
    client: ChatClient,
    dataset_version: str = "",
    failure_budget: float = FAILURE_BUDGET,
) -> tuple[list[LabeledSample], list[LabelFailure]]:
    """Produce one label per assembled prompt, in entry order.

    Requests fan out under the client's concurrency bound; results are
    reassembled in entry order.  Individual provider failures skip the entry;
    more than FAILURE_BUDGET of the batch failing aborts the run, since a
    gutted dataset is worse than a failed one.
    """
    reqs = [
        ChatRequest.user(p.rendered_text, system=LABEL_SYSTEM, tag=f"label:{p.id}")
        for p, _ in entries
    ]
    settled = client.chat_many_settled(reqs)
    samples: list[LabeledSample] = []
    failures: list[LabelFailure] = []
    for i, ((prompt, task_type), outcome) in enumerate(zip(entries, settled)):
        if isinstance(outcome, Exception):
            failures.append(LabelFailure(i, prompt.dialogue_id, prompt.instruction_id, str(outcome)))
            logger.warning("label generation failed for pair %d (%s): %s", i, prompt.dialogue_id, outcome)
            continue
        samples.append(
            LabeledSample(
                id=hashlib.sha256(f"sample|{prompt.id}".encode("utf-8")).hexdigest()[:16],
                prompt_id=prompt.id,
                dialogue_id=prompt.dialogue_id,
                task_type=task_type,
                label_text=outcome,
                prompt_text=prompt.rendered_text,
                dataset_version=dataset_version,
            )
        )
    if entries and len(failures) / len(entries) > failure_budget:
        raise DialforgeError(
            f"labeling aborted: {len(failures)}/{len(entries)} pairs failed "
            f"(budget {failure_budget:.0%})"
        )
    return samples, failures


def generate_labels(
    pairs: Sequence[tuple[Dialogue, InstructionRecord]],
    registry: TemplateRegistry,
    client: ChatClient,
    assembly_seed: int,
    restructure_prompts: bool = False,
    dataset_version: str = "",
    failure_budget: float = FAILURE_BUDGET,
) -> tuple[list[LabeledSample], list[AssembledPrompt], list[LabelFailure]]:
    """Assemble one prompt per pair and have the provider produce its label."""
    entries: list[tuple[AssembledPrompt, TaskType]] = []
    for i, (dialogue, record) in enumerate(pairs):
        prompt = assemble(registry, record, dialogue, seed=assembly_seed + i)
        if restructure_prompts:
            prompt = restructure(prompt, client)
        entries.append((prompt, record.task_type))
    samples, failures = label_prompts(entries, client, dataset_version, failure_budget)
    return samples, [p for p, _ in entries], failures


# ---------------------------------------------------------------------------
# Judge classification


@dataclass(frozen=True)
class JudgeRubric:
    version: str
    text: str

    @classmethod
    def bundled(cls) -> "JudgeRubric":
        raw = resources.files("dialforge.data").joinpath("label_rubric.json").read_text("utf-8")
        doc = json.loads(raw)
        return cls(version=doc["version"], text=doc["text"])

    @classmethod
    def from_file(cls, path: str | Path) -> "JudgeRubric":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(version=doc["version"], text=doc["text"])


_CLASS_WORDS = {
    "high": JudgeClass.HIGH,
    "medium": JudgeClass.MEDIUM,
    "low": JudgeClass.LOW,
    "高": JudgeClass.HIGH,
    "中": JudgeClass.MEDIUM,
    "低": JudgeClass.LOW,
}

_CLASS_RE = re.compile(r"\b(high|medium|low)\b", re.IGNORECASE)


def parse_judge_class(text: str) -> JudgeClass | None:
    m = _CLASS_RE.search(text)
    if m:
        return JudgeClass(m.group(1).lower())
    stripped = text.strip()
    if stripped in _CLASS_WORDS:
        return _CLASS_WORDS[stripped]
    return None


def classify_label_quality(
    samples: Sequence[LabeledSample],
    client: ChatClient,
    rubric: JudgeRubric | None = None,
) -> list[LabeledSample]:
    """Classify every sample into exactly one of high/medium/low.

    Unparseable judge output is retried once with a stricter instruction;
    a second failure classifies the sample Low and flags it for review.
    """
    rubric = rubric or JudgeRubric.bundled()
    prompts = [
        rubric.text.format(prompt=s.prompt_text, label=s.label_text) for s in samples
    ]
    replies = client.chat_many(
        [ChatRequest.user(p, tag=f"judge-label:{s.id}") for p, s in zip(prompts, samples)]
    )
    out: list[LabeledSample] = []
    for sample, prompt, reply in zip(samples, prompts, replies):
        judged = parse_judge_class(reply)
        flag = ""
        if judged is None:
            retry = client.chat(
                ChatRequest.user(
                    prompt + "\n\n注意：只能输出 high、medium、low 三个词之一。",
                    tag=f"judge-label-retry:{sample.id}",
                )
            )
            judged = parse_judge_class(retry)
            if judged is None:
                judged = JudgeClass.LOW
                flag = "unparseable-judge-output"
                logger.warning("judge output unparseable for sample %s; marked low", sample.id)
        out.append(replace(sample, judge_class=judged, judge_flag=flag))
    return out


def write_samples(samples: Sequence[LabeledSample], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_record(), ensure_ascii=False, sort_keys=True) + "\n")


def read_samples(path: str | Path) -> list[LabeledSample]:
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(LabeledSample.from_record(json.loads(line)))
    return out
