"""Shared fixtures: a deterministic synthetic corpus and scripted providers.

The fake transports stand in for the chat provider.  They are pure functions
of the request document, so record/replay cassettes built against them are
self-consistent and every pipeline run is reproducible.
"""

from __future__ import annotations

import hashlib
import json
import random
import re
from pathlib import Path

import pytest

from dialforge.corpus import Dialogue, Scene, ServiceRole, SourceType, Turn, write_corpus
from dialforge.errors import TransientProviderError
from dialforge.providers import Cassette, ChatClient

# ---------------------------------------------------------------------------
# Synthetic corpus

_PROVIDER_LINES = [
    "您好，我是您的置业顾问，今天想跟您确认一下看房安排。",
    "这套房源南北通透，楼层适中，周边有地铁和学校。",
    "业主这边的心理价位比挂牌价略有空间，可以谈。",
    "首付比例和贷款方案我可以帮您测算一份。",
    "如果您周末有时间，我约业主一起当面聊聊细节。",
    "装修方案我们出了两版，一版偏现代简约，一版偏日式原木。",
    "租约是一年起签，押一付三，物业费包含在租金里。",
    "合同里关于违约责任的条款我逐条给您解释一下。",
]

_CUSTOMER_LINES = [
    "我更关心总价和税费，预算不太想超。",
    "孩子明年上学，学区是硬性要求。",
    "房子采光怎么样？下午能晒到太阳吗？",
    "贷款年限最长能做多少年？利率是多少？",
    "我需要跟家里人商量一下再定。",
    "阳台能不能封起来？改造费用大概多少？",
    "租金能不能再便宜两百？我可以签两年。",
    "交房时间太晚了，能不能提前一个月？",
]

_SCENES = list(Scene)
_SOURCES = list(SourceType)
_ROLES = list(ServiceRole)


def build_fixture_corpus(n: int = 20, seed: int = 1234) -> list[Dialogue]:
    rng = random.Random(seed)
    dialogues = []
    for i in range(n):
        turn_count = 2 + rng.randrange(3)
        turns = []
        for t in range(turn_count):
            if t % 2 == 0:
                text = _PROVIDER_LINES[rng.randrange(len(_PROVIDER_LINES))]
                turns.append(Turn("provider", text))
            else:
                text = _CUSTOMER_LINES[rng.randrange(len(_CUSTOMER_LINES))]
                turns.append(Turn("customer", text))
        dialogues.append(
            Dialogue(
                id=f"dlg-{i:03d}",
                scene=_SCENES[i % len(_SCENES)],
                source=_SOURCES[i % len(_SOURCES)],
                turns=turns,
                provider_role=_ROLES[i % len(_ROLES)],
                metadata={"batch": "fixture"},
            )
        )
    return dialogues


@pytest.fixture(scope="session")
def fixture_corpus() -> list[Dialogue]:
    return build_fixture_corpus()


@pytest.fixture()
def corpus_path(tmp_path, fixture_corpus) -> Path:
    path = tmp_path / "corpus.jsonl"
    write_corpus(fixture_corpus, path)
    return path


# ---------------------------------------------------------------------------
# Deterministic fake provider

_SEED_BANK = [
    "请从对话中提取客户提出的全部需求，并逐条列出对应的原文依据",
    "请总结服务者在本次沟通中的服务流程和关键承诺",
    "请分析客户的购买意向强弱，并给出三条跟进建议",
    "请识别对话中客户关心的价格、税费与付款方式信息",
    "请判断客户是否存在流失风险，并说明推理过程",
    "请将对话内容整理成一份面向业主的沟通纪要",
    "请比较客户提到的各项要求与房源条件的匹配程度",
    "请为服务者草拟一条跟进消息，回应客户的主要疑虑",
    "请统计对话中出现的房源卖点并按客户反馈分类",
    "请梳理双方确认过的时间节点和待办事项",
    "请评估服务者话术的专业程度并指出改进点",
    "请提取对话中涉及的学区、交通、配套等周边信息",
]

_LABEL_OPENERS = [
    "结论：客户的核心诉求集中在预算与学区两方面。",
    "结论：本次沟通推进顺利，客户意向等级为中高。",
    "结论：客户对价格敏感，建议优先谈税费空间。",
    "结论：双方已就看房时间达成一致。",
]


def _h(text: str) -> str:
    return hashlib.sha1(text.encode("utf-8")).hexdigest()


class DeterministicTransport:
    """Scripted provider: responses are pure functions of the request."""

    def __init__(self):
        self.calls: list[dict] = []

    def __call__(self, doc: dict) -> str:
        self.calls.append(doc)
        system = doc["messages"][0]["text"] if doc["messages"][0]["role"] == "system" else ""
        user = doc["messages"][-1]["text"]
        digest = _h(user)
        if "数据构造专家" in system:
            return self._seeds(user, digest)
        if "指令改写专家" in system:
            return self._evolve(user, digest)
        if "提示词编辑" in system:
            return self._restructure(user)
        if "对话分析助手" in system:
            return self._label(user, digest)
        if "训练数据质检员" in user:
            return "high"
        if "严格的评测员" in user:
            return "得分：9。候选回答覆盖了标准答案的全部要点。"
        return f"好的。（{digest[:8]}）"

    def _seeds(self, user: str, digest: str) -> str:
        m = re.search(r"设计(\d+)条", user)
        k = int(m.group(1)) if m else 3
        base = int(digest[:8], 16)
        lines = []
        for i in range(k):
            sentence = _SEED_BANK[(base + i * 5) % len(_SEED_BANK)]
            lines.append(f"{i + 1}. {sentence}（编号{digest[:6]}-{i}）")
        return "\n".join(lines)

    def _evolve(self, user: str, digest: str) -> str:
        instruction = user.rsplit("\n\n", 1)[-1].strip()
        extras = [
            "至少覆盖三个要点，每个要点注明出处",
            "输出前先给出一句话的总体判断",
            "遇到对话未提及的信息须明确标注「未提及」",
            "使用编号列表，控制在两百字以内",
        ]
        extra = extras[int(digest[:8], 16) % len(extras)]
        return f"{instruction}。补充要求：{extra}。"

    def _restructure(self, user: str) -> str:
        blocks = {}
        for name in ("任务指令", "输出格式", "总体要求"):
            m = re.search(rf"\[{name}\]\n(.*?)(?=\n\n\[|\Z)", user, re.S)
            blocks[name] = m.group(1).strip() if m else ""
        return (
            f"{blocks['任务指令']}，完成时请遵循以下要求：{blocks['输出格式']}"
            f"同时注意：{blocks['总体要求']}"
        )

    def _label(self, user: str, digest: str) -> str:
        opener = _LABEL_OPENERS[int(digest[:8], 16) % len(_LABEL_OPENERS)]
        return (
            f"{opener}\n"
            f"依据：对话第1轮、第2轮的相关表述。\n"
            f"要点（{digest[:6]}）：1. 预算范围已确认；2. 后续跟进时间已约定。"
        )


class FlakyTransport:
    """Fails the first ``fail_times`` calls with a transient error."""

    def __init__(self, inner, fail_times: int):
        self.inner = inner
        self.fail_times = fail_times
        self.attempts = 0

    def __call__(self, doc: dict) -> str:
        self.attempts += 1
        if self.attempts <= self.fail_times:
            raise TransientProviderError(f"injected transient failure {self.attempts}")
        return self.inner(doc)


@pytest.fixture()
def fake_transport() -> DeterministicTransport:
    return DeterministicTransport()


@pytest.fixture()
def fake_client(fake_transport) -> ChatClient:
    return ChatClient(model="fixture-model", transport=fake_transport, backoff_base=0.0)


def record_cassette(tmp_path: Path, name: str, fn) -> Path:
    """Run ``fn(client)`` against the deterministic transport in record mode
    and return the cassette path ready for replay."""
    path = tmp_path / name
    client = ChatClient(
        model="fixture-model",
        transport=DeterministicTransport(),
        cassette=Cassette(path, "record"),
        backoff_base=0.0,
    )
    fn(client)
    return path


def replay_client(path: Path, **kw) -> ChatClient:
    def no_network(doc):  # replay mode must never reach a transport
        raise AssertionError("network call attempted in replay mode")

    return ChatClient(
        model="fixture-model",
        transport=no_network,
        cassette=Cassette(path, "replay"),
        backoff_base=0.0,
        **kw,
    )


# ---------------------------------------------------------------------------
# End-to-end pipeline fixture


def pipeline_config(cassette_mode: str) -> dict:
    return {
        "corpus": "fixtures/corpus.jsonl",
        "cassette": "fixtures/pipeline.cassette.jsonl",
        "cassette_mode": cassette_mode,
        "provider": {"model": "fixture-model", "max_concurrency": 4},
        "seeds": {"task_types": ["Information Extraction", "Content Summarization"], "k": 2},
        "dedup": {"threshold": 0.82},
        "evolution": {"operators": ["add-constraints"]},
        "review": {"policy": "auto-approve"},
        "sampling": {
            "weights": {
                "buying the house|Information Extraction": 0.5,
                "renting the house|Content Summarization": 0.5,
            },
            "n": 10,
            "seed": 42,
            "with_replacement": False,
        },
        "assembly": {"seed": 7, "restructure": False},
        "labeling": {"dataset_version": "v1.0-fixture"},
        "quality": {"threshold": 0.82, "top_n": 1, "tokenizer": "ref-v1", "component": "full"},
        "eval": {"testset": "fixtures/testset.jsonl", "candidates": "fixtures/candidates.jsonl"},
    }


def build_pipeline_workspace(root: Path) -> Path:
    """Write corpus/testset fixtures, record the cassette, and drop a
    replay-mode config.  Returns the config path."""
    from dialforge.cli import CANONICAL_STAGES, PipelineRun
    from dialforge.corpus import TaskType
    from dialforge.evalharness import OutputFormatTag

    fixdir = root / "fixtures"
    fixdir.mkdir(parents=True, exist_ok=True)
    write_corpus(build_fixture_corpus(), fixdir / "corpus.jsonl")
    cases, cands = [], []
    for i in range(6):
        case = {
            "id": f"case-{i:03d}",
            "prompt": f"请提取对话{i}的要点",
            "dialogue_id": f"dlg-{i:03d}",
            "task_type": list(TaskType)[i % 6].value,
            "output_format": list(OutputFormatTag)[i % 5].value,
            "reference_answer": f"要点{i}：预算与学区。",
        }
        cases.append(case)
        cands.append({"case_id": case["id"], "text": case["reference_answer"]})
    (fixdir / "testset.jsonl").write_text(
        "\n".join(json.dumps(c, ensure_ascii=False) for c in cases) + "\n", encoding="utf-8"
    )
    (fixdir / "candidates.jsonl").write_text(
        "\n".join(json.dumps(c, ensure_ascii=False) for c in cands) + "\n", encoding="utf-8"
    )
    rec_client = ChatClient(
        model="fixture-model",
        transport=DeterministicTransport(),
        cassette=Cassette(fixdir / "pipeline.cassette.jsonl", "record"),
        backoff_base=0.0,
    )
    PipelineRun(pipeline_config("record"), root, root / "recording-run", client=rec_client).run(
        list(CANONICAL_STAGES)
    )
    config_path = root / "config.json"
    config_path.write_text(
        json.dumps(pipeline_config("replay"), ensure_ascii=False, indent=2), encoding="utf-8"
    )
    return config_path


@pytest.fixture(scope="session")
def pipeline_workspace(tmp_path_factory) -> Path:
    root = tmp_path_factory.mktemp("pipeline")
    return build_pipeline_workspace(root)
