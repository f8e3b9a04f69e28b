"""Stage 1: seed instruction generation, evolution, and the review lifecycle.

Instructions move through Seed -> Evolved -> ScreenedKept -> Refined ->
Approved, with screening/refinement decisions made by humans (see the review
service).  Every decision is appended to an audit log that can be replayed to
prove no record ever took an illegal path.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import threading
import time
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Sequence

from .corpus import Dialogue, Scene, TaskType
from .errors import DialforgeError, IllegalTransitionError, ValidationError
from .providers import ChatClient, ChatRequest, cosine

logger = logging.getLogger(__name__)


class LifecycleState(str, Enum):
    SEED = "Seed"
    EVOLVED = "Evolved"
    SCREENED_KEPT = "ScreenedKept"
    SCREENED_DISCARDED = "ScreenedDiscarded"
    REFINED = "Refined"
    APPROVED = "Approved"


class Decision(str, Enum):
    KEEP = "keep"
    DISCARD = "discard"
    REFINE = "refine"
    APPROVE = "approve"


# Single-record state graph.  Evolution itself creates a *new* record that
# starts at Evolved, so Seed -> Evolved never appears in an audit log.
LEGAL_TRANSITIONS: dict[LifecycleState, frozenset[LifecycleState]] = {
    LifecycleState.SEED: frozenset(
        {LifecycleState.EVOLVED, LifecycleState.SCREENED_KEPT, LifecycleState.SCREENED_DISCARDED}
    ),
    LifecycleState.EVOLVED: frozenset(
        {LifecycleState.SCREENED_KEPT, LifecycleState.SCREENED_DISCARDED}
    ),
    LifecycleState.SCREENED_KEPT: frozenset({LifecycleState.REFINED, LifecycleState.APPROVED}),
    LifecycleState.REFINED: frozenset({LifecycleState.APPROVED}),
    LifecycleState.SCREENED_DISCARDED: frozenset(),
    LifecycleState.APPROVED: frozenset(),
}

DECISION_TARGET: dict[Decision, LifecycleState] = {
    Decision.KEEP: LifecycleState.SCREENED_KEPT,
    Decision.DISCARD: LifecycleState.SCREENED_DISCARDED,
    Decision.REFINE: LifecycleState.REFINED,
    Decision.APPROVE: LifecycleState.APPROVED,
}

EVOLVABLE_STATES = frozenset({LifecycleState.SEED, LifecycleState.SCREENED_KEPT})

# What reviewers check during screening; surfaced as a checklist, not enforced.
SCREENING_CHECKLIST = (
    "清晰易懂，没有歧义",
    "无需人工修改即可直接使用",
    "比原始指令更详细、更完善",
    "与场景、角色和对话内容相关",
)


def decision_is_legal(state: LifecycleState, decision: Decision) -> bool:
    return DECISION_TARGET[decision] in LEGAL_TRANSITIONS[state]


@dataclass
class InstructionRecord:
    id: str
    text: str
    task_type: TaskType
    scene: Scene
    state: LifecycleState
    parent_id: str | None = None
    operator: str | None = None
    reviewer_note: str | None = None

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "text": self.text,
            "task_type": self.task_type.value,
            "scene": self.scene.value,
            "state": self.state.value,
            "parent_id": self.parent_id,
            "operator": self.operator,
            "reviewer_note": self.reviewer_note,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "InstructionRecord":
        return cls(
            id=rec["id"],
            text=rec["text"],
            task_type=TaskType(rec["task_type"]),
            scene=Scene(rec["scene"]),
            state=LifecycleState(rec["state"]),
            parent_id=rec.get("parent_id"),
            operator=rec.get("operator"),
            reviewer_note=rec.get("reviewer_note"),
        )


def _record_id(*parts: str) -> str:
    return hashlib.sha256("|".join(parts).encode("utf-8")).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Seed generation

SEED_SYSTEM = "你是一名房产服务领域的数据构造专家，擅长为对话分析任务设计清晰、具体的任务指令。"

SEED_PROMPT = """请根据以下对话的场景信息，为「{task_type}」类任务设计{k}条互不相同的任务指令。

场景：{scene}
服务者角色：{role}
数据来源：{source}
对话内容：
{dialogue}

要求：
1. 每条指令都要结合上述场景、角色与对话内容，不能脱离语境。
2. 指令之间的措辞和侧重点应当不同。
3. 按编号列表输出，每行一条，格式为「1. 指令内容」。
"""

_NUMBERED_LINE = re.compile(r"^\s*\d+\s*[\.、)）]\s*(.+?)\s*$")


def parse_numbered_list(text: str) -> list[str]:
    items = []
    for line in text.splitlines():
        m = _NUMBERED_LINE.match(line)
        if m:
            items.append(m.group(1))
    return items


def render_dialogue(dialogue: Dialogue) -> str:
    labels = {"provider": "服务者", "customer": "客户"}
    return "\n".join(f"{labels[t.speaker]}：{t.text}" for t in dialogue.turns)


def generate_seeds(
    dialogue: Dialogue, task_type: TaskType, k: int, client: ChatClient
) -> list[InstructionRecord]:
    """Ask the chat provider for ``k`` seed instructions grounded in the dialogue.

    Returns up to ``k`` Seed records; a shortfall is logged as a warning
    rather than raised, since generation is stochastic.
    """
    if k <= 0:
        raise ValidationError("k must be positive")
    prompt = SEED_PROMPT.format(
        task_type=task_type.value,
        k=k,
        scene=dialogue.scene.value,
        role=dialogue.provider_role.value,
        source=dialogue.source.value,
        dialogue=render_dialogue(dialogue),
    )
    completion = client.chat(ChatRequest.user(prompt, system=SEED_SYSTEM, tag=f"seeds:{dialogue.id}"))
    texts = parse_numbered_list(completion)[:k]
    if len(texts) < k:
        logger.warning(
            "seed generation for dialogue %s yielded %d/%d instructions",
            dialogue.id,
            len(texts),
            k,
        )
    return [
        InstructionRecord(
            id=_record_id("seed", dialogue.id, task_type.value, str(i), text),
            text=text,
            task_type=task_type,
            scene=dialogue.scene,
            state=LifecycleState.SEED,
        )
        for i, text in enumerate(texts)
    ]


# ---------------------------------------------------------------------------
# Evolution operators

EVOLVE_SYSTEM = "你是一名指令改写专家。只输出改写后的完整指令，不要输出任何解释。"

_OPERATOR_PROMPTS: dict[str, str] = {
    "add-constraints": (
        "请在保持任务目标不变的前提下，为下面的指令增加一到两条明确、可验证的约束条件"
        "（例如数量限制、必须覆盖的要点、禁止的内容），使任务更具体：\n\n{instruction}"
    ),
    "deepen-specificity": (
        "请把下面的指令改写得更深入：要求更细的粒度、更多分析层次，"
        "并且明确说明每一步需要关注什么：\n\n{instruction}"
    ),
    "add-output-format-demands": (
        "请改写下面的指令，为其补充明确的输出格式要求（例如字段名、列表结构或表格列），"
        "格式要求要和任务内容匹配：\n\n{instruction}"
    ),
    "concretize-with-scene-details": (
        "请结合「{scene}」场景和「{role}」角色的业务特点，把下面的指令具体化，"
        "加入贴合该场景的业务细节：\n\n{instruction}"
    ),
}


def register_operator(name: str, prompt_template: str) -> None:
    """Add a rewrite operator; the template sees {instruction}, {scene}, {role}."""
    _OPERATOR_PROMPTS[name] = prompt_template


def operator_names() -> list[str]:
    return sorted(_OPERATOR_PROMPTS)


def evolve(
    record: InstructionRecord,
    operator: str,
    client: ChatClient,
    role: str = "",
) -> InstructionRecord:
    """Rewrite ``record`` with a named operator, producing a new Evolved record.

    The input record is never mutated; provenance is kept via parent_id.
    """
    if record.state not in EVOLVABLE_STATES:
        raise IllegalTransitionError(record.id, record.state.value, f"evolve[{operator}]")
    if operator not in _OPERATOR_PROMPTS:
        raise ValidationError(f"unknown operator {operator!r}; registered: {operator_names()}")
    prompt = _OPERATOR_PROMPTS[operator].format(
        instruction=record.text, scene=record.scene.value, role=role
    )
    completion = client.chat(
        ChatRequest.user(prompt, system=EVOLVE_SYSTEM, tag=f"evolve:{record.id}")
    ).strip()
    if not completion:
        raise DialforgeError(f"operator {operator} produced an empty rewrite for {record.id}")
    return InstructionRecord(
        id=_record_id("evolved", record.id, operator, completion),
        text=completion,
        task_type=record.task_type,
        scene=record.scene,
        state=LifecycleState.EVOLVED,
        parent_id=record.id,
        operator=operator,
    )


def resolve_provenance(record: InstructionRecord, store: "InstructionStore") -> list[InstructionRecord]:
    """Walk parent links back to the seed; raises on cycles or broken chains."""
    chain = [record]
    seen = {record.id}
    cur = record
    while cur.parent_id is not None:
        cur = store.get(cur.parent_id)
        if cur.id in seen:
            raise DialforgeError(f"provenance cycle at record {cur.id}")
        seen.add(cur.id)
        chain.append(cur)
    if chain[-1].parent_id is not None:
        raise DialforgeError(f"provenance chain of {record.id} does not end at a seed")
    return chain


# ---------------------------------------------------------------------------
# Semantic dedup

DEFAULT_DEDUP_THRESHOLD = 0.82


def dedup_filter(
    candidates: Sequence[InstructionRecord],
    pool: Sequence[InstructionRecord],
    threshold: float = DEFAULT_DEDUP_THRESHOLD,
    embedder=None,
) -> tuple[list[InstructionRecord], list[InstructionRecord]]:
    """Drop candidates too similar to the pool or to an earlier-kept candidate.

    A candidate is rejected iff its max cosine similarity against pool members
    plus already-kept candidates is >= threshold.  kept + rejected == candidates.
    """
    if not 0 < threshold <= 1:
        raise ValidationError("threshold must be in (0, 1]")
    if embedder is None:
        from .providers import HashedNgramEmbedder

        embedder = HashedNgramEmbedder()
    if not candidates:
        return [], []
    texts = [r.text for r in pool] + [r.text for r in candidates]
    vectors = embedder.embed(texts)
    pool_vecs = list(vectors[: len(pool)])
    cand_vecs = vectors[len(pool):]
    kept: list[InstructionRecord] = []
    rejected: list[InstructionRecord] = []
    for record, vec in zip(candidates, cand_vecs):
        max_sim = max((cosine(vec, other) for other in pool_vecs), default=0.0)
        if max_sim >= threshold:
            rejected.append(record)
        else:
            kept.append(record)
            pool_vecs.append(vec)
    return kept, rejected


# ---------------------------------------------------------------------------
# Store + audit log


@dataclass(frozen=True)
class AuditEntry:
    seq: int
    record_id: str
    decision: str
    from_state: str
    to_state: str
    reviewer: str
    note: str
    ts: float

    def to_record(self) -> dict:
        return {
            "seq": self.seq,
            "record_id": self.record_id,
            "decision": self.decision,
            "from_state": self.from_state,
            "to_state": self.to_state,
            "reviewer": self.reviewer,
            "note": self.note,
            "ts": self.ts,
        }


class InstructionStore:
    """Single-writer instruction store with an append-only audit log.

    Decisions are serialized under one lock, so two concurrent reviewers on
    the same record resolve to first-wins plus an IllegalTransitionError.
    """

    def __init__(
        self,
        path: str | Path | None = None,
        audit_path: str | Path | None = None,
        clock: Callable[[], float] = time.time,
    ):
        self.path = Path(path) if path else None
        self.audit_path = Path(audit_path) if audit_path else None
        self.clock = clock
        self._records: dict[str, InstructionRecord] = {}
        self._order: list[str] = []
        self._state_changed_at: dict[str, float] = {}
        self._audit: list[AuditEntry] = []
        self._lock = threading.Lock()
        if self.path and self.path.exists():
            self._load()

    def _load(self) -> None:
        with self.path.open(encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    self.add(InstructionRecord.from_record(json.loads(line)))

    def add(self, record: InstructionRecord) -> InstructionRecord:
        with self._lock:
            if record.id in self._records:
                raise ValidationError(f"duplicate record id {record.id}")
            self._records[record.id] = record
            self._order.append(record.id)
            self._state_changed_at[record.id] = self.clock()
        return record

    def get(self, record_id: str) -> InstructionRecord:
        try:
            return self._records[record_id]
        except KeyError:
            raise KeyError(f"unknown record id {record_id!r}")

    def all(self) -> list[InstructionRecord]:
        return [self._records[i] for i in self._order]

    def by_state(self, state: LifecycleState) -> list[InstructionRecord]:
        return [r for r in self.all() if r.state == state]

    def state_changed_at(self, record_id: str) -> float:
        return self._state_changed_at[record_id]

    def state_counts(self) -> dict[str, int]:
        counts = {s.value: 0 for s in LifecycleState}
        for r in self.all():
            counts[r.state.value] += 1
        return counts

    @property
    def audit_log(self) -> list[AuditEntry]:
        return list(self._audit)

    def apply_decision(
        self,
        record_id: str,
        decision: Decision | str,
        text: str | None = None,
        note: str = "",
        reviewer: str = "",
        expected_state: LifecycleState | str | None = None,
    ) -> InstructionRecord:
        """Advance a record's lifecycle; illegal transitions raise with context.

        ``expected_state`` enables optimistic concurrency: if the record moved
        since the caller last looked, the decision fails instead of applying
        to the wrong state.
        """
        decision = Decision(decision)
        with self._lock:
            record = self.get(record_id)
            if expected_state is not None:
                expected = LifecycleState(expected_state)
                if record.state != expected:
                    raise IllegalTransitionError(
                        record_id, record.state.value, f"{decision.value} (expected {expected.value})"
                    )
            if not decision_is_legal(record.state, decision):
                raise IllegalTransitionError(record_id, record.state.value, decision.value)
            if decision == Decision.REFINE:
                if not text or not text.strip():
                    raise ValidationError("refine requires nonempty replacement text")
                updated = replace(
                    record,
                    state=DECISION_TARGET[decision],
                    text=text,
                    reviewer_note=note or record.reviewer_note,
                )
            else:
                updated = replace(record, state=DECISION_TARGET[decision])
            self._records[record_id] = updated
            self._state_changed_at[record_id] = self.clock()
            entry = AuditEntry(
                seq=len(self._audit) + 1,
                record_id=record_id,
                decision=decision.value,
                from_state=record.state.value,
                to_state=updated.state.value,
                reviewer=reviewer,
                note=note,
                ts=self.clock(),
            )
            self._audit.append(entry)
            if self.audit_path:
                self.audit_path.parent.mkdir(parents=True, exist_ok=True)
                with self.audit_path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps(entry.to_record(), ensure_ascii=False, sort_keys=True) + "\n")
            return updated

    def save(self, path: str | Path | None = None) -> None:
        target = Path(path) if path else self.path
        if target is None:
            raise ValidationError("no store path configured")
        target.parent.mkdir(parents=True, exist_ok=True)
        with target.open("w", encoding="utf-8") as fh:
            for record in self.all():
                fh.write(json.dumps(record.to_record(), ensure_ascii=False, sort_keys=True) + "\n")


def validate_audit_log(entries: Sequence[AuditEntry], initial_states: dict[str, LifecycleState]) -> None:
    """Replay an audit log and fail on the first illegal step.

    ``initial_states`` maps record ids to the state each record was created
    in (Seed for fresh seeds, Evolved for evolution children).
    """
    current = dict(initial_states)
    for entry in entries:
        state = current.get(entry.record_id)
        if state is None:
            raise DialforgeError(f"audit entry {entry.seq}: unknown record {entry.record_id}")
        if state.value != entry.from_state:
            raise DialforgeError(
                f"audit entry {entry.seq}: from_state {entry.from_state} but record "
                f"{entry.record_id} is in {state.value}"
            )
        decision = Decision(entry.decision)
        if not decision_is_legal(state, decision):
            raise DialforgeError(
                f"audit entry {entry.seq}: illegal {decision.value} from {state.value}"
            )
        target = DECISION_TARGET[decision]
        if target.value != entry.to_state:
            raise DialforgeError(
                f"audit entry {entry.seq}: to_state {entry.to_state} does not match "
                f"decision target {target.value}"
            )
        current[entry.record_id] = target
