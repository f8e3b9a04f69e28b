"""Data model, ingestion, validation, and PII scrubbing for dialogue corpora.

A corpus file is UTF-8 JSON Lines: one record per line with keys ``id``,
``scene``, ``source``, ``provider_role``, ``turns`` (list of
``{speaker, text}``) and an optional ``metadata`` map.  Scene, source, and
role are serialized as their production English phrases (the enum values
below) so files interchange cleanly with the upstream business systems.
"""

from __future__ import annotations

import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from enum import Enum
from importlib import resources
from pathlib import Path

from .errors import IngestError, ValidationError

logger = logging.getLogger(__name__)

PROVIDER = "provider"
CUSTOMER = "customer"
SPEAKERS = (PROVIDER, CUSTOMER)


class Scene(str, Enum):
    """The four business scenes a dialogue can belong to."""

    BUY_HOUSE = "buying the house"
    SELL_HOUSE = "selling the house"
    RENT_HOUSE = "renting the house"
    HOME_IMPROVEMENT = "Home improvement"


class SourceType(str, Enum):
    """The ten channels raw dialogues arrive from (all pre-transcribed)."""

    CALL_RECORDING = "call recordings"
    LARGE_SCREEN_RECORDING = "large screen recordings"
    SMART_BADGE_RECORDING = "smart badge recordings"
    VR_RECORDING = "VR recordings"
    PAD_RECORDING = "PAD recordings"
    MOBILE_PHONE_RECORDING = "mobile phone recordings"
    SINGLE_TEXT_RECORD = "single text records"
    IM_CONVERSATION = "IM conversation messages"
    CORPORATE_GROUP_MESSAGE = "corporate WeChat group messages"
    PERSONAL_CORPORATE_MESSAGE = "personal corporate WeChat messages"


class ServiceRole(str, Enum):
    """Service-provider roles appearing in the corpus."""

    REAL_ESTATE_AGENT = "real estate agents"
    HOME_DESIGNER = "home designers"
    RENTAL_CLOUD_MANAGER = "house rental cloud managers"
    LEASE_ASSET_MANAGER = "lease asset managers"
    CUSTOMER_MANAGER = "customer managers"
    HOME_ADVISOR = "home advisors"


class TaskType(str, Enum):
    """The six task families instructions are written for."""

    INFORMATION_EXTRACTION = "Information Extraction"
    CONTENT_SUMMARIZATION = "Content Summarization"
    REASONING_ABILITY = "Reasoning Ability"
    DIALOGUE_GENERATION = "Dialogue Generation"
    DATA_ANALYSIS_COMPARISON = "Data Analysis and Comparison"
    MULTITASK_INTEGRATION = "Multitask Integration"


PII_CATEGORIES = ("name", "phone", "account", "password", "other")


@dataclass(frozen=True)
class Turn:
    speaker: str  # "provider" | "customer"
    text: str


@dataclass
class Dialogue:
    """One multi-turn service-provider/customer conversation."""

    id: str
    scene: Scene
    source: SourceType
    turns: list[Turn]
    provider_role: ServiceRole
    metadata: dict[str, str] = field(default_factory=dict)

    def validate(self) -> None:
        if not self.id:
            raise ValidationError("dialogue id must be nonempty")
        if not self.turns:
            raise ValidationError(f"dialogue {self.id}: turns must be nonempty")
        for i, turn in enumerate(self.turns):
            if turn.speaker not in SPEAKERS:
                raise ValidationError(
                    f"dialogue {self.id}: turn {i} speaker {turn.speaker!r} "
                    f"not in {SPEAKERS}"
                )

    def text(self) -> str:
        """All turn text joined with newlines, speakers omitted."""
        return "\n".join(t.text for t in self.turns)

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "scene": self.scene.value,
            "source": self.source.value,
            "provider_role": self.provider_role.value,
            "turns": [{"speaker": t.speaker, "text": t.text} for t in self.turns],
            "metadata": dict(self.metadata),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Dialogue":
        for key in ("id", "scene", "source", "provider_role", "turns"):
            if key not in rec:
                raise ValidationError(f"missing field '{key}'")
        try:
            scene = Scene(rec["scene"])
        except ValueError:
            raise ValidationError(f"unknown scene {rec['scene']!r}")
        try:
            source = SourceType(rec["source"])
        except ValueError:
            raise ValidationError(f"unknown source {rec['source']!r}")
        try:
            role = ServiceRole(rec["provider_role"])
        except ValueError:
            raise ValidationError(f"unknown provider_role {rec['provider_role']!r}")
        turns = [Turn(t.get("speaker", ""), t.get("text", "")) for t in rec["turns"]]
        dialogue = cls(
            id=rec["id"],
            scene=scene,
            source=source,
            turns=turns,
            provider_role=role,
            metadata=dict(rec.get("metadata") or {}),
        )
        dialogue.validate()
        return dialogue


# ---------------------------------------------------------------------------
# Ingestion


@dataclass(frozen=True)
class IngestDiagnostic:
    line_no: int
    message: str
    kind: str  # "skipped" | "quarantined"


@dataclass
class IngestReport:
    diagnostics: list[IngestDiagnostic] = field(default_factory=list)
    quarantined: list[dict] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.diagnostics)


def ingest_corpus(path: str | Path, schema_strict: bool = False) -> tuple[list[Dialogue], IngestReport]:
    """Read a JSONL corpus file, preserving input order.

    In strict mode the first malformed record aborts with its line number.
    In lenient mode malformed lines are skipped with a diagnostic; records
    whose scene/source/role strings are unrecognized go to the quarantine
    bucket (kept in the report, excluded from the returned corpus so that
    downstream weighted sampling never sees unclassifiable data).
    """
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"corpus file not found: {path}")
    dialogues: list[Dialogue] = []
    report = IngestReport()
    seen_ids: set[str] = set()
    with path.open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                if schema_strict:
                    raise IngestError(line_no, f"invalid JSON: {exc.msg}")
                report.diagnostics.append(
                    IngestDiagnostic(line_no, f"invalid JSON: {exc.msg}", "skipped")
                )
                continue
            try:
                dialogue = Dialogue.from_record(rec)
            except ValidationError as exc:
                if schema_strict:
                    raise IngestError(line_no, str(exc))
                kind = "quarantined" if str(exc).startswith("unknown ") else "skipped"
                report.diagnostics.append(IngestDiagnostic(line_no, str(exc), kind))
                if kind == "quarantined":
                    report.quarantined.append(rec)
                continue
            if dialogue.id in seen_ids:
                if schema_strict:
                    raise IngestError(line_no, f"duplicate dialogue id {dialogue.id!r}")
                report.diagnostics.append(
                    IngestDiagnostic(line_no, f"duplicate dialogue id {dialogue.id!r}", "skipped")
                )
                continue
            seen_ids.add(dialogue.id)
            dialogues.append(dialogue)
    return dialogues, report


def write_corpus(dialogues: list[Dialogue], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for d in dialogues:
            fh.write(json.dumps(d.to_record(), ensure_ascii=False, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# PII scrubbing


@dataclass(frozen=True)
class RedactionRule:
    """One detection rule.

    ``pattern`` is a regex; if it defines a ``pii`` group, only that group is
    replaced, otherwise the whole match.  ``placeholder_prefix`` is the token
    used inside ``<PREFIX_k>`` placeholders.
    """

    category: str
    pattern: str
    placeholder_prefix: str

    def __post_init__(self):
        if self.category not in PII_CATEGORIES:
            raise ValidationError(
                f"rule category {self.category!r} not in {PII_CATEGORIES}"
            )
        re.compile(self.pattern)


@dataclass(frozen=True)
class RedactionSpan:
    turn_index: int
    start_byte: int
    end_byte: int
    category: str
    placeholder: str


@dataclass
class RedactionReport:
    dialogue_id: str
    spans: list[RedactionSpan] = field(default_factory=list)

    def to_record(self) -> dict:
        return {
            "dialogue_id": self.dialogue_id,
            "spans": [
                {
                    "turn_index": s.turn_index,
                    "start_byte": s.start_byte,
                    "end_byte": s.end_byte,
                    "category": s.category,
                    "placeholder": s.placeholder,
                }
                for s in self.spans
            ],
        }


_PLACEHOLDER_RE = re.compile(r"<[A-Z]+_\d+>")


def load_ruleset(path: str | Path | None = None) -> list[RedactionRule]:
    """Load a redaction ruleset; with no path, the bundled default."""
    if path is None:
        raw = resources.files("dialforge.data").joinpath("redaction_rules.json").read_text("utf-8")
    else:
        raw = Path(path).read_text(encoding="utf-8")
    entries = json.loads(raw)
    rules = [
        RedactionRule(e["category"], e["pattern"], e["placeholder_prefix"])
        for e in entries
    ]
    if not rules:
        raise ValidationError("redaction ruleset is empty")
    return rules


def _byte_offset(text: str, char_index: int) -> int:
    return len(text[:char_index].encode("utf-8"))


def scrub_pii(
    dialogue: Dialogue, rules: list[RedactionRule] | None = None
) -> tuple[Dialogue, RedactionReport]:
    """Replace every matched PII span with a typed ``<CATEGORY_k>`` placeholder.

    Numbering is per dialogue and per category in first-occurrence order;
    repeated occurrences of the same value reuse the same placeholder, which
    keeps references consistent inside one conversation.  Text already shaped
    like a placeholder is never rematched, so the operation is idempotent.
    Only turn text changes; turn count, speakers, and metadata are preserved.
    """
    if rules is None:
        rules = load_ruleset()
    if not rules:
        raise ValidationError("redaction ruleset must be nonempty")

    report = RedactionReport(dialogue_id=dialogue.id)
    counters: dict[str, int] = {}
    assigned: dict[tuple[str, str], str] = {}  # (category, value) -> placeholder
    new_turns: list[Turn] = []

    for turn_index, turn in enumerate(dialogue.turns):
        text = turn.text
        protected = [m.span() for m in _PLACEHOLDER_RE.finditer(text)]
        matches: list[tuple[int, int, RedactionRule]] = []
        for rule in rules:
            for m in re.finditer(rule.pattern, text):
                span = m.span("pii") if "pii" in m.groupdict() and m.group("pii") else m.span()
                if span[0] == span[1]:
                    continue
                if any(span[0] < p_end and p_start < span[1] for p_start, p_end in protected):
                    continue
                matches.append((span[0], span[1], rule))
        # earliest match wins; on equal start the longest wins
        matches.sort(key=lambda t: (t[0], -(t[1] - t[0])))
        kept: list[tuple[int, int, RedactionRule]] = []
        last_end = -1
        for start, end, rule in matches:
            if start < last_end:
                continue
            kept.append((start, end, rule))
            last_end = end

        pieces: list[str] = []
        cursor = 0
        for start, end, rule in kept:
            value = text[start:end]
            key = (rule.category, value)
            if key not in assigned:
                counters[rule.category] = counters.get(rule.category, 0) + 1
                assigned[key] = f"<{rule.placeholder_prefix}_{counters[rule.category]}>"
            placeholder = assigned[key]
            report.spans.append(
                RedactionSpan(
                    turn_index=turn_index,
                    start_byte=_byte_offset(text, start),
                    end_byte=_byte_offset(text, end),
                    category=rule.category,
                    placeholder=placeholder,
                )
            )
            pieces.append(text[cursor:start])
            pieces.append(placeholder)
            cursor = end
        pieces.append(text[cursor:])
        new_turns.append(Turn(turn.speaker, "".join(pieces)))

    clean = replace(dialogue, turns=new_turns, metadata=dict(dialogue.metadata))
    return clean, report


# ---------------------------------------------------------------------------
# Profiling


# Upper edges of the dialogue-length buckets (total characters).
LENGTH_BUCKET_EDGES = (100, 200, 400, 800, 1600, 3200)


def _length_bucket(n_chars: int) -> str:
    lo = 0
    for edge in LENGTH_BUCKET_EDGES:
        if n_chars <= edge:
            return f"{lo}-{edge}"
        lo = edge + 1
    return f">{LENGTH_BUCKET_EDGES[-1]}"


@dataclass
class CorpusProfile:
    n: int
    scene_counts: dict[str, int]
    source_counts: dict[str, int]
    role_counts: dict[str, int]
    turn_count_hist: dict[str, int]
    length_hist: dict[str, int]

    def to_record(self) -> dict:
        return {
            "n": self.n,
            "scene_counts": dict(sorted(self.scene_counts.items())),
            "source_counts": dict(sorted(self.source_counts.items())),
            "role_counts": dict(sorted(self.role_counts.items())),
            "turn_count_hist": dict(sorted(self.turn_count_hist.items())),
            "length_hist": dict(sorted(self.length_hist.items())),
        }


def corpus_profile(corpus: list[Dialogue]) -> CorpusProfile:
    """Histogram bundle over scene, source, role, turn count, and text length.

    Every histogram's counts sum to the corpus size.
    """
    if not corpus:
        raise ValidationError("cannot profile an empty corpus")
    scenes = Counter(d.scene.value for d in corpus)
    sources = Counter(d.source.value for d in corpus)
    roles = Counter(d.provider_role.value for d in corpus)
    turn_counts = Counter(str(len(d.turns)) for d in corpus)
    lengths = Counter(_length_bucket(sum(len(t.text) for t in d.turns)) for d in corpus)
    return CorpusProfile(
        n=len(corpus),
        scene_counts=dict(scenes),
        source_counts=dict(sources),
        role_counts=dict(roles),
        turn_count_hist=dict(turn_counts),
        length_hist=dict(lengths),
    )
