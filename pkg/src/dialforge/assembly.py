"""Stage 2: template library, seeded prompt splicing, and narrative restructuring.

A production prompt is built from six template sections rendered in a fixed
canonical order.  Splicing picks one variant per section with a seeded RNG so
dataset builds are reproducible; restructuring then fuses the format, the
guidelines, and the task directive into one coherent narrative while leaving
background, character, and dialogue text byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

from .corpus import Dialogue, Scene
from .errors import CoverageError, RestructureError, ValidationError
from .evolution import InstructionRecord, LifecycleState, render_dialogue
from .providers import ChatClient, ChatRequest

logger = logging.getLogger(__name__)


class TemplateSection(str, Enum):
    BACKGROUND = "Background"
    CHARACTER_DESCRIPTION = "CharacterDescription"
    DIALOGUE_SLOT = "DialogueSlot"
    INSTRUCTION_NARRATIVE = "InstructionNarrative"
    OUTPUT_FORMAT = "OutputFormat"
    GENERAL_GUIDELINES = "GeneralGuidelines"


CANONICAL_SECTION_ORDER = (
    TemplateSection.BACKGROUND,
    TemplateSection.CHARACTER_DESCRIPTION,
    TemplateSection.DIALOGUE_SLOT,
    TemplateSection.INSTRUCTION_NARRATIVE,
    TemplateSection.OUTPUT_FORMAT,
    TemplateSection.GENERAL_GUIDELINES,
)

SECTION_HEADERS = {
    TemplateSection.BACKGROUND: "【背景】",
    TemplateSection.CHARACTER_DESCRIPTION: "【角色设定】",
    TemplateSection.DIALOGUE_SLOT: "【对话内容】",
    TemplateSection.INSTRUCTION_NARRATIVE: "【任务指令】",
    TemplateSection.OUTPUT_FORMAT: "【输出格式】",
    TemplateSection.GENERAL_GUIDELINES: "【总体要求】",
}

# Names a template may reference; anything else is a registration error.
PLACEHOLDER_VOCABULARY = frozenset(
    {"scene", "role", "source", "dialogue", "instruction", "task_type"}
)

_PLACEHOLDER = re.compile(r"\{(\w+)\}")


@dataclass(frozen=True)
class TemplateVariant:
    id: str
    section: TemplateSection
    text: str
    applicable_scenes: frozenset[Scene] = frozenset()  # empty = all scenes

    def placeholders(self) -> set[str]:
        return set(_PLACEHOLDER.findall(self.text))


@dataclass
class AssembledPrompt:
    id: str
    section_variant_ids: dict[TemplateSection, str]
    section_texts: dict[TemplateSection, str]
    rendered_text: str
    instruction_id: str
    dialogue_id: str
    seed: int
    mode: str  # "spliced" | "restructured"

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "section_variant_ids": {s.value: v for s, v in self.section_variant_ids.items()},
            "section_texts": {s.value: t for s, t in self.section_texts.items()},
            "rendered_text": self.rendered_text,
            "instruction_id": self.instruction_id,
            "dialogue_id": self.dialogue_id,
            "seed": self.seed,
            "mode": self.mode,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "AssembledPrompt":
        return cls(
            id=rec["id"],
            section_variant_ids={TemplateSection(k): v for k, v in rec["section_variant_ids"].items()},
            section_texts={TemplateSection(k): v for k, v in rec["section_texts"].items()},
            rendered_text=rec["rendered_text"],
            instruction_id=rec["instruction_id"],
            dialogue_id=rec["dialogue_id"],
            seed=rec["seed"],
            mode=rec["mode"],
        )


class TemplateRegistry:
    """Template variants indexed by section, filterable by scene."""

    def __init__(self):
        self._variants: dict[str, TemplateVariant] = {}

    def register(self, variant: TemplateVariant) -> TemplateVariant:
        if variant.id in self._variants:
            raise ValidationError(f"duplicate template id {variant.id!r}")
        if not variant.text:
            raise ValidationError(f"template {variant.id!r} has empty text")
        unknown = variant.placeholders() - PLACEHOLDER_VOCABULARY
        if unknown:
            raise ValidationError(
                f"template {variant.id!r} uses undeclared placeholder(s): {sorted(unknown)}"
            )
        self._variants[variant.id] = variant
        return variant

    def variants_for(self, section: TemplateSection, scene: Scene) -> list[TemplateVariant]:
        """Variants applicable to (section, scene), in stable id order."""
        out = [
            v
            for v in self._variants.values()
            if v.section == section and (not v.applicable_scenes or scene in v.applicable_scenes)
        ]
        return sorted(out, key=lambda v: v.id)

    def __len__(self) -> int:
        return len(self._variants)

    @classmethod
    def from_file(cls, path: str | Path) -> "TemplateRegistry":
        registry = cls()
        with Path(path).open(encoding="utf-8") as fh:
            registry._load_lines(fh)
        return registry

    @classmethod
    def bundled(cls) -> "TemplateRegistry":
        """The illustrative template pack shipped with the package."""
        from importlib import resources

        registry = cls()
        raw = resources.files("dialforge.data").joinpath("template_pack.jsonl").read_text("utf-8")
        registry._load_lines(raw.splitlines())
        return registry

    def _load_lines(self, lines) -> None:
        for line in lines:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            self.register(
                TemplateVariant(
                    id=rec["id"],
                    section=TemplateSection(rec["section"]),
                    text=rec["text"],
                    applicable_scenes=frozenset(Scene(s) for s in rec.get("applicable_scenes", [])),
                )
            )


def _render_sections(section_texts: dict[TemplateSection, str]) -> str:
    parts = []
    for section in CANONICAL_SECTION_ORDER:
        if section in section_texts:
            parts.append(f"{SECTION_HEADERS[section]}\n{section_texts[section]}")
    return "\n\n".join(parts)


def _fill(template_text: str, context: dict[str, str]) -> str:
    # str.format would trip over literal braces in format examples, so only
    # known placeholder names are substituted.
    return _PLACEHOLDER.sub(
        lambda m: context[m.group(1)] if m.group(1) in context else m.group(0),
        template_text,
    )


def assemble(
    registry: TemplateRegistry,
    instruction: InstructionRecord,
    dialogue: Dialogue,
    seed: int,
) -> AssembledPrompt:
    """Splice one prompt by uniform seeded choice of a variant per section.

    Deterministic for a fixed (registry, instruction, dialogue, seed); the
    instruction must be Approved before it is allowed into production prompts.
    """
    if instruction.state != LifecycleState.APPROVED:
        raise ValidationError(
            f"instruction {instruction.id} is {instruction.state.value}, not Approved"
        )
    rng = random.Random(seed)
    context = {
        "scene": dialogue.scene.value,
        "role": dialogue.provider_role.value,
        "source": dialogue.source.value,
        "dialogue": render_dialogue(dialogue),
        "instruction": instruction.text,
        "task_type": instruction.task_type.value,
    }
    chosen: dict[TemplateSection, str] = {}
    section_texts: dict[TemplateSection, str] = {}
    for section in CANONICAL_SECTION_ORDER:
        variants = registry.variants_for(section, dialogue.scene)
        if not variants:
            raise CoverageError(
                f"no {section.value} template variant covers scene {dialogue.scene.value!r}"
            )
        variant = variants[rng.randrange(len(variants))]
        chosen[section] = variant.id
        section_texts[section] = _fill(variant.text, context)
    prompt_id = hashlib.sha256(
        "|".join(
            ["prompt", instruction.id, dialogue.id, str(seed)]
            + [chosen[s] for s in CANONICAL_SECTION_ORDER]
        ).encode("utf-8")
    ).hexdigest()[:16]
    return AssembledPrompt(
        id=prompt_id,
        section_variant_ids=chosen,
        section_texts=section_texts,
        rendered_text=_render_sections(section_texts),
        instruction_id=instruction.id,
        dialogue_id=dialogue.id,
        seed=seed,
        mode="spliced",
    )


# Tokens quoted like 「字段」 / "field" / “字段” in the format section must
# survive restructuring verbatim.
_QUOTED_TOKEN = re.compile(r"[「“\"'`]([^「」“”\"'`\n]{1,40})[」”\"'`]")

RESTRUCTURE_SYSTEM = "你是一名提示词编辑。只输出改写结果，不要输出任何解释。"

RESTRUCTURE_PROMPT = """请把下面三部分内容融合改写成一段连贯、自然的任务叙述，保留全部要求与细节，
特别是所有被引号标出的字段名和格式符号，一个都不能丢：

[任务指令]
{narrative}

[输出格式]
{output_format}

[总体要求]
{guidelines}
"""


def extract_format_tokens(output_format_text: str) -> list[str]:
    seen = []
    for token in _QUOTED_TOKEN.findall(output_format_text):
        if token not in seen:
            seen.append(token)
    return seen


def merge_narrative_fallback(narrative: str, output_format: str, guidelines: str) -> str:
    """Deterministic offline merge: keep all three texts under one heading."""
    return f"{narrative}\n\n要求：\n{output_format}\n{guidelines}"


def restructure(prompt: AssembledPrompt, client: ChatClient | None = None) -> AssembledPrompt:
    """Fuse format, guidelines, and directive into one narrative section.

    Background, character, and dialogue sections are carried over verbatim.
    If the fused narrative loses any quoted format token, the rewrite is
    rejected rather than silently shipping a weaker prompt.
    """
    if prompt.mode != "spliced":
        raise ValidationError(f"restructure requires a spliced prompt, got mode={prompt.mode!r}")
    narrative = prompt.section_texts[TemplateSection.INSTRUCTION_NARRATIVE]
    output_format = prompt.section_texts[TemplateSection.OUTPUT_FORMAT]
    guidelines = prompt.section_texts[TemplateSection.GENERAL_GUIDELINES]
    if client is not None:
        fused = client.chat(
            ChatRequest.user(
                RESTRUCTURE_PROMPT.format(
                    narrative=narrative, output_format=output_format, guidelines=guidelines
                ),
                system=RESTRUCTURE_SYSTEM,
                tag=f"restructure:{prompt.id}",
            )
        ).strip()
    else:
        fused = merge_narrative_fallback(narrative, output_format, guidelines)
    missing = [t for t in extract_format_tokens(output_format) if t not in fused]
    if missing:
        raise RestructureError(
            f"fused narrative for prompt {prompt.id} dropped format token(s): {missing}"
        )
    section_texts = {
        TemplateSection.BACKGROUND: prompt.section_texts[TemplateSection.BACKGROUND],
        TemplateSection.CHARACTER_DESCRIPTION: prompt.section_texts[TemplateSection.CHARACTER_DESCRIPTION],
        TemplateSection.DIALOGUE_SLOT: prompt.section_texts[TemplateSection.DIALOGUE_SLOT],
        TemplateSection.INSTRUCTION_NARRATIVE: fused,
    }
    new_id = hashlib.sha256(f"restructured|{prompt.id}|{fused}".encode("utf-8")).hexdigest()[:16]
    return AssembledPrompt(
        id=new_id,
        section_variant_ids=dict(prompt.section_variant_ids),
        section_texts=section_texts,
        rendered_text=_render_sections(section_texts),
        instruction_id=prompt.instruction_id,
        dialogue_id=prompt.dialogue_id,
        seed=prompt.seed,
        mode="restructured",
    )


def write_prompts(prompts: Sequence[AssembledPrompt], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for p in prompts:
            fh.write(json.dumps(p.to_record(), ensure_ascii=False, sort_keys=True) + "\n")


def read_prompts(path: str | Path) -> list[AssembledPrompt]:
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(AssembledPrompt.from_record(json.loads(line)))
    return out
