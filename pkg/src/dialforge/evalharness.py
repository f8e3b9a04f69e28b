"""Reference-anchored judge evaluation over a domain test set.

Every judge request embeds the test case's reference answer, so the judge
grades against the labeled ground truth instead of its own taste.  Scores are
integers 1..10; aggregation reports means overall and per task type / output
format.
"""

from __future__ import annotations

import json
import logging
import re
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Sequence

from .corpus import TaskType
from .errors import JudgeParseError, ValidationError
from .providers import ChatClient, ChatRequest

logger = logging.getLogger(__name__)


class OutputFormatTag(str, Enum):
    STRUCTURED = "structured document"
    TABLE = "table"
    FREE_TEXT = "free text"
    LIST = "list"
    MIXED = "mixed"


@dataclass(frozen=True)
class TestCase:
    __test__ = False  # not a pytest class, despite the name

    id: str
    prompt: str
    dialogue_id: str
    task_type: TaskType
    output_format: OutputFormatTag
    reference_answer: str

    def __post_init__(self):
        if not self.reference_answer:
            raise ValidationError(f"test case {self.id}: reference_answer must be nonempty")

    @classmethod
    def from_record(cls, rec: dict) -> "TestCase":
        return cls(
            id=rec["id"],
            prompt=rec["prompt"],
            dialogue_id=rec["dialogue_id"],
            task_type=TaskType(rec["task_type"]),
            output_format=OutputFormatTag(rec["output_format"]),
            reference_answer=rec["reference_answer"],
        )

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "prompt": self.prompt,
            "dialogue_id": self.dialogue_id,
            "task_type": self.task_type.value,
            "output_format": self.output_format.value,
            "reference_answer": self.reference_answer,
        }


@dataclass(frozen=True)
class JudgedResult:
    case_id: str
    candidate_text: str
    score: int
    judge_rationale: str
    judge_version: str

    def __post_init__(self):
        if not 1 <= self.score <= 10:
            raise ValidationError(f"case {self.case_id}: score {self.score} outside 1..10")

    def to_record(self) -> dict:
        return {
            "case_id": self.case_id,
            "candidate_text": self.candidate_text,
            "score": self.score,
            "judge_rationale": self.judge_rationale,
            "judge_version": self.judge_version,
        }


@dataclass(frozen=True)
class EvalRubric:
    version: str
    text: str

    @classmethod
    def bundled(cls) -> "EvalRubric":
        doc = json.loads(
            resources.files("dialforge.data").joinpath("eval_rubric.json").read_text("utf-8")
        )
        return cls(version=doc["version"], text=doc["text"])

    @classmethod
    def from_file(cls, path: str | Path) -> "EvalRubric":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(version=doc["version"], text=doc["text"])


def read_testset(path: str | Path) -> list[TestCase]:
    cases = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                cases.append(TestCase.from_record(json.loads(line)))
    if not cases:
        raise ValidationError(f"test set {path} is empty")
    return cases


def read_candidates(path: str | Path) -> dict[str, str]:
    out: dict[str, str] = {}
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            out[rec["case_id"]] = rec["text"]
    return out


def profile_testset(cases: Sequence[TestCase]) -> dict[str, dict[str, int]]:
    """Counts by task type and output format; each sums to the case count."""
    if not cases:
        raise ValidationError("test set is empty")
    return {
        "task_type": dict(sorted(Counter(c.task_type.value for c in cases).items())),
        "output_format": dict(sorted(Counter(c.output_format.value for c in cases).items())),
    }


_SCORE_RE = re.compile(r"(?:得分|score)\s*[:：]?\s*(\d{1,2})", re.IGNORECASE)
_BARE_INT_RE = re.compile(r"\b(\d{1,2})\b")


def parse_score(text: str) -> int | None:
    m = _SCORE_RE.search(text)
    if m is None:
        m = _BARE_INT_RE.search(text)
    if m is None:
        return None
    value = int(m.group(1))
    if not 1 <= value <= 10:
        return None
    return value


def judge_case(
    case: TestCase,
    candidate: str,
    client: ChatClient,
    rubric: EvalRubric | None = None,
) -> JudgedResult:
    """Score a candidate against the case's reference answer.

    One retry on unparseable or out-of-range output; a second failure is a
    hard error rather than a made-up score.
    """
    rubric = rubric or EvalRubric.bundled()
    prompt = rubric.text.format(
        prompt=case.prompt, reference=case.reference_answer, candidate=candidate
    )
    reply = client.chat(ChatRequest.user(prompt, tag=f"judge-case:{case.id}"))
    score = parse_score(reply)
    if score is None:
        retry = client.chat(
            ChatRequest.user(
                prompt + "\n\n注意：必须按「得分：N」输出一个1到10的整数。",
                tag=f"judge-case-retry:{case.id}",
            )
        )
        score = parse_score(retry)
        if score is None:
            raise JudgeParseError(
                f"case {case.id}: judge output unparseable after retry: {retry[:120]!r}"
            )
        reply = retry
    return JudgedResult(
        case_id=case.id,
        candidate_text=candidate,
        score=score,
        judge_rationale=reply,
        judge_version=rubric.version,
    )


def aggregate(
    results: Sequence[JudgedResult], cases: Sequence[TestCase]
) -> dict:
    """Mean score overall and per task type / output format, to 2 decimals."""
    if not results:
        raise ValidationError("no judged results to aggregate")
    ids = [r.case_id for r in results]
    dupes = [cid for cid, k in Counter(ids).items() if k > 1]
    if dupes:
        raise ValidationError(f"duplicate case ids in results: {sorted(dupes)}")
    by_id = {c.id: c for c in cases}
    missing = [cid for cid in ids if cid not in by_id]
    if missing:
        raise ValidationError(f"results reference unknown cases: {sorted(missing)}")

    def summarize(scores: list[int]) -> dict:
        return {"mean": round(sum(scores) / len(scores), 2), "count": len(scores)}

    by_task: dict[str, list[int]] = {}
    by_format: dict[str, list[int]] = {}
    for r in results:
        case = by_id[r.case_id]
        by_task.setdefault(case.task_type.value, []).append(r.score)
        by_format.setdefault(case.output_format.value, []).append(r.score)
    return {
        "overall": summarize([r.score for r in results]),
        "by_task_type": {k: summarize(v) for k, v in sorted(by_task.items())},
        "by_output_format": {k: summarize(v) for k, v in sorted(by_format.items())},
    }


def run_eval(
    cases: Sequence[TestCase],
    candidates: dict[str, str],
    client: ChatClient,
    rubric: EvalRubric | None = None,
) -> tuple[list[JudgedResult], dict]:
    """Judge every case that has a candidate; deterministic order by case id."""
    rubric = rubric or EvalRubric.bundled()
    results = []
    for case in sorted(cases, key=lambda c: c.id):
        if case.id not in candidates:
            raise ValidationError(f"no candidate output for case {case.id}")
        results.append(judge_case(case, candidates[case.id], client, rubric))
    return results, aggregate(results, cases)


def render_comparison_table(rows: Sequence[dict], benchmark_names: Sequence[str]) -> str:
    """Merge externally supplied benchmark numbers into one comparison table.

    Each row: {"model": str, "domain_score": float|None, "benchmarks":
    {name: float}}.  Missing numbers render as "-".
    """
    headers = ["model name", "domain test"] + list(benchmark_names)
    table = [headers]
    for row in rows:
        cells = [row["model"]]
        ds = row.get("domain_score")
        cells.append(f"{ds:.2f}" if ds is not None else "-")
        for name in benchmark_names:
            v = row.get("benchmarks", {}).get(name)
            cells.append(f"{v:.2f}" if v is not None else "-")
        table.append(cells)
    widths = [max(len(r[i]) for r in table) for i in range(len(headers))]
    lines = []
    for idx, r in enumerate(table):
        lines.append("  ".join(c.ljust(widths[i]) for i, c in enumerate(r)).rstrip())
        if idx == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)
