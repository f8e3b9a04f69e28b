"""Builder for the hand-marked PII fixture.

Turn texts are assembled from clean segments and PII tokens, and the span
offsets are recorded on the construction side (byte offsets into the final
turn text).  That makes the expected spans independent of the scrubber's own
matching logic.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from dialforge.corpus import Dialogue, Scene, ServiceRole, SourceType, Turn

# Clean filler that must not trip any default rule (no surname+honorific,
# no 我叫/我是+surname, no long digit runs).
_CLEAN = [
    "这套房源的采光很好，",
    "咱们约个时间线下聊聊，",
    "关于贷款方案的细节，",
    "物业费和取暖费都已经确认过了，",
    "您提到的学区问题我查过了，",
    "合同条款没有问题的话，",
    "装修的事情可以慢慢商量，",
    "看房安排在周六上午，",
]

_TAILS = ["。", "，稍后联系。", "，您看可以吗。", "，麻烦确认一下。"]

# (lead-in that stays in the text, PII token, category)
_PLANTS = [
    ("电话", "13812345678", "phone"),
    ("手机号", "15900001111", "phone"),
    ("号码", "18612349876", "phone"),
    ("座机", "010-66554433", "phone"),
    ("卡号", "6222021234567890123", "account"),
    ("银行卡", "6212345678901234", "account"),
    ("账号是", "zh2024abc", "account"),
    ("账号：", "user88from", "account"),
    ("密码是", "Ab12cd34", "password"),
    ("密码：", "pass2024!", "password"),
    ("验证码是", "908712", "password"),
    ("", "王先生", "name"),
    ("", "李女士", "name"),
    ("", "赵经理", "name"),
    ("我叫", "张伟明", "name"),
    ("这边是", "刘芳", "name"),
]


@dataclass(frozen=True)
class PlantedSpan:
    dialogue_id: str
    turn_index: int
    start_byte: int
    end_byte: int
    category: str


def build_pii_fixture(
    n_dialogues: int = 14, seed: int = 99
) -> tuple[list[Dialogue], list[PlantedSpan]]:
    rng = random.Random(seed)
    dialogues: list[Dialogue] = []
    planted: list[PlantedSpan] = []
    plant_cursor = 0
    for d_idx in range(n_dialogues):
        dialogue_id = f"pii-{d_idx:03d}"
        turns: list[Turn] = []
        n_turns = 2 + rng.randrange(2)
        for t_idx in range(n_turns):
            parts: list[tuple[str, str | None]] = [(_CLEAN[rng.randrange(len(_CLEAN))], None)]
            # plant one or two tokens per turn, cycling so categories balance
            for _ in range(1 + rng.randrange(2)):
                lead, token, category = _PLANTS[plant_cursor % len(_PLANTS)]
                plant_cursor += 1
                parts.append((lead, None))
                parts.append((token, category))
                parts.append(("，", None))
            parts.append((_TAILS[rng.randrange(len(_TAILS))], None))
            text = ""
            byte_pos = 0
            for fragment, category in parts:
                frag_bytes = len(fragment.encode("utf-8"))
                if category is not None:
                    planted.append(
                        PlantedSpan(dialogue_id, t_idx, byte_pos, byte_pos + frag_bytes, category)
                    )
                text += fragment
                byte_pos += frag_bytes
            speaker = "provider" if t_idx % 2 == 0 else "customer"
            turns.append(Turn(speaker, text))
        dialogues.append(
            Dialogue(
                id=dialogue_id,
                scene=list(Scene)[d_idx % len(Scene)],
                source=list(SourceType)[d_idx % len(SourceType)],
                turns=turns,
                provider_role=list(ServiceRole)[d_idx % len(ServiceRole)],
            )
        )
    return dialogues, planted
