"""Dataset quality metrics: complexity, richness, redundancy, label quality.

The five headline numbers for one dataset version:

- prompt complexity: mean prompt token length.
- input complexity: mean of (1/3 dialogue tokens + 2/3 prompt tokens).
- richness: fraction of samples kept as cluster representatives after
  cosine-threshold clustering (with one representative per cluster this is
  clusters / samples).
- redundancy (repetition rate): 1 - richness, always from the same
  clustering.
- label quality: fraction of samples judged high / medium / low.

Clustering is a greedy single pass in dataset file order: a sample joins the
best-matching existing cluster when its similarity to that cluster's
representatives reaches the threshold, otherwise it founds a new cluster.
Order sensitivity is real, so the order and every knob are recorded in the
report's provenance fields.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import Dialogue
from .errors import ValidationError
from .labeling import JudgeClass, LabeledSample
from .providers import DEFAULT_TOKENIZER_ID, HashedNgramEmbedder, token_count

logger = logging.getLogger(__name__)

DEFAULT_SIMILARITY_THRESHOLD = 0.82
DEFAULT_TOP_N = 1

# Which text is clustered for richness.
COMPONENTS = ("full", "prompt", "label")


@dataclass(frozen=True)
class MetricSample:
    """The view of one sample the metrics need."""

    prompt_text: str
    dialogue_text: str
    label_text: str
    judge_class: JudgeClass | None = None

    def component(self, name: str) -> str:
        if name == "prompt":
            return self.prompt_text
        if name == "label":
            return self.label_text
        return self.prompt_text + "\n" + self.label_text


def metric_samples(
    samples: Sequence[LabeledSample], corpus: Sequence[Dialogue]
) -> list[MetricSample]:
    by_id = {d.id: d for d in corpus}
    out = []
    for s in samples:
        if s.dialogue_id not in by_id:
            raise ValidationError(f"sample {s.id} references unknown dialogue {s.dialogue_id}")
        out.append(
            MetricSample(
                prompt_text=s.prompt_text,
                dialogue_text=by_id[s.dialogue_id].text(),
                label_text=s.label_text,
                judge_class=s.judge_class,
            )
        )
    return out


def prompt_complexity(samples: Sequence[MetricSample], tokenizer_id: str = DEFAULT_TOKENIZER_ID) -> float:
    """Mean prompt token length over the dataset."""
    if not samples:
        raise ValidationError("dataset is empty")
    total = sum(token_count(s.prompt_text, tokenizer_id) for s in samples)
    return total / len(samples)


def input_complexity(samples: Sequence[MetricSample], tokenizer_id: str = DEFAULT_TOKENIZER_ID) -> float:
    """Mean of one third dialogue tokens plus two thirds prompt tokens."""
    if not samples:
        raise ValidationError("dataset is empty")
    total = sum(
        token_count(s.dialogue_text, tokenizer_id) / 3.0
        + 2.0 * token_count(s.prompt_text, tokenizer_id) / 3.0
        for s in samples
    )
    return total / len(samples)


@dataclass
class ClusteringResult:
    assignments: list[int]  # sample index -> cluster id (dense, 0..N-1)
    representatives: dict[int, list[int]]  # cluster id -> first top_n member indices
    N: int
    threshold: float
    top_n: int

    def sizes(self) -> dict[int, int]:
        counts: dict[int, int] = {}
        for c in self.assignments:
            counts[c] = counts.get(c, 0) + 1
        return counts

    def validate(self) -> None:
        n = len(self.assignments)
        if sorted(set(self.assignments)) != list(range(self.N)):
            raise ValidationError("cluster ids must be dense 0..N-1 and all used")
        for cid, reps in self.representatives.items():
            if not 1 <= len(reps) <= self.top_n:
                raise ValidationError(f"cluster {cid} has {len(reps)} representatives")
        if sum(self.sizes().values()) != n:
            raise ValidationError("cluster sizes do not sum to n")


def cluster(
    texts: Sequence[str],
    embedder=None,
    threshold: float = DEFAULT_SIMILARITY_THRESHOLD,
    top_n: int = DEFAULT_TOP_N,
) -> ClusteringResult:
    """Greedy single-pass clustering in input order.

    Each sample joins the existing cluster whose representatives are most
    similar to it, provided that similarity is >= threshold (ties go to the
    lowest cluster id); otherwise it founds a new cluster.  Representatives
    are the first ``top_n`` members of each cluster.
    """
    if not 0 < threshold <= 1:
        raise ValidationError("threshold must be in (0, 1]")
    if top_n < 1:
        raise ValidationError("top_n must be positive")
    if not texts:
        raise ValidationError("dataset is empty")
    if embedder is None:
        embedder = HashedNgramEmbedder()
    vectors = embedder.embed(list(texts))
    matrix = np.stack([v.values for v in vectors])
    norms = np.linalg.norm(matrix, axis=1)
    norms[norms == 0] = 1.0
    matrix = matrix / norms[:, None]

    assignments: list[int] = []
    representatives: dict[int, list[int]] = {}
    for i in range(len(texts)):
        best_cluster = -1
        best_sim = -1.0
        for cid in range(len(representatives)):
            reps = representatives[cid]
            sim = float(np.max(matrix[reps] @ matrix[i]))
            if sim > best_sim:
                best_sim = sim
                best_cluster = cid
        if best_cluster >= 0 and best_sim >= threshold:
            assignments.append(best_cluster)
            if len(representatives[best_cluster]) < top_n:
                representatives[best_cluster].append(i)
        else:
            cid = len(representatives)
            representatives[cid] = [i]
            assignments.append(cid)
    result = ClusteringResult(
        assignments=assignments,
        representatives=representatives,
        N=len(representatives),
        threshold=threshold,
        top_n=top_n,
    )
    result.validate()
    return result


def richness_of(clustering: ClusteringResult) -> float:
    """Fraction of samples retained as cluster representatives."""
    n = len(clustering.assignments)
    sizes = clustering.sizes()
    retained = sum(min(clustering.top_n, size) for size in sizes.values())
    return retained / n


def redundancy_of(clustering: ClusteringResult) -> float:
    """Repetition rate: the exact complement of richness, same clustering."""
    return 1.0 - richness_of(clustering)


def richness(
    texts: Sequence[str],
    embedder=None,
    threshold: float = DEFAULT_SIMILARITY_THRESHOLD,
    top_n: int = DEFAULT_TOP_N,
) -> float:
    return richness_of(cluster(texts, embedder, threshold, top_n))


def label_quality(samples: Sequence[MetricSample]) -> dict[str, float]:
    """Class fractions over the judged dataset; they sum to one."""
    if not samples:
        raise ValidationError("dataset is empty")
    for i, s in enumerate(samples):
        if s.judge_class is None:
            raise ValidationError(f"sample {i} has no judge_class; classify labels first")
    counts = {c.value: 0 for c in JudgeClass}
    for s in samples:
        counts[s.judge_class.value] += 1
    n = len(samples)
    return {c: counts[c] / n for c in counts}


@dataclass
class QualityReport:
    dataset_version: str
    n: int
    prompt_complexity: float
    input_complexity: float
    richness: float
    redundancy: float
    label_quality: dict[str, float]
    clustering: dict
    tokenizer_id: str
    embedder_id: str
    threshold: float
    top_n: int
    component: str
    order: str = "dataset file order"

    def validate(self) -> None:
        if self.richness + self.redundancy != 1.0:
            raise ValidationError("richness + redundancy must equal 1 exactly")
        if abs(sum(self.label_quality.values()) - 1.0) > 1e-9:
            raise ValidationError("label quality fractions must sum to 1")

    def to_record(self) -> dict:
        return {
            "dataset_version": self.dataset_version,
            "n": self.n,
            "prompt_complexity": self.prompt_complexity,
            "input_complexity": self.input_complexity,
            "richness": self.richness,
            "redundancy": self.redundancy,
            "label_quality": dict(sorted(self.label_quality.items())),
            "clustering": self.clustering,
            "tokenizer_id": self.tokenizer_id,
            "embedder_id": self.embedder_id,
            "threshold": self.threshold,
            "top_n": self.top_n,
            "component": self.component,
            "order": self.order,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_record(), ensure_ascii=False, sort_keys=True, indent=2)

    @classmethod
    def from_record(cls, rec: dict) -> "QualityReport":
        fields = {k: rec[k] for k in (
            "dataset_version", "n", "prompt_complexity", "input_complexity",
            "richness", "redundancy", "label_quality", "clustering",
            "tokenizer_id", "embedder_id", "threshold", "top_n", "component",
        )}
        return cls(order=rec.get("order", "dataset file order"), **fields)


def build_report(
    samples: Sequence[MetricSample],
    dataset_version: str,
    tokenizer_id: str = DEFAULT_TOKENIZER_ID,
    embedder=None,
    threshold: float = DEFAULT_SIMILARITY_THRESHOLD,
    top_n: int = DEFAULT_TOP_N,
    component: str = "full",
) -> QualityReport:
    """Compute all metrics once and assemble the report with its provenance."""
    if component not in COMPONENTS:
        raise ValidationError(f"component {component!r} not in {COMPONENTS}")
    if embedder is None:
        embedder = HashedNgramEmbedder()
    texts = [s.component(component) for s in samples]
    clustering = cluster(texts, embedder, threshold, top_n)
    ri = richness_of(clustering)
    report = QualityReport(
        dataset_version=dataset_version,
        n=len(samples),
        prompt_complexity=prompt_complexity(samples, tokenizer_id),
        input_complexity=input_complexity(samples, tokenizer_id),
        richness=ri,
        redundancy=redundancy_of(clustering),
        label_quality=label_quality(samples),
        clustering={
            "clusters": clustering.N,
            "threshold": clustering.threshold,
            "top_n": clustering.top_n,
            "representatives": sum(len(r) for r in clustering.representatives.values()),
        },
        tokenizer_id=tokenizer_id,
        embedder_id=getattr(embedder, "model_id", "unknown"),
        threshold=threshold,
        top_n=top_n,
        component=component,
    )
    report.validate()
    return report


def format_percent_pair(ri: float) -> tuple[str, str]:
    """Display strings for richness and repetition that always sum to 100%.

    The repetition percentage is formatted as the complement of the rounded
    richness percentage, so rounding can never make the pair sum to 100.01.
    """
    ri_pct = round(ri * 100, 2)
    re_pct = round(100 - ri_pct, 2)
    return (f"{ri_pct:.2f}%", f"{re_pct:.2f}%")


def render_table(reports: Sequence[QualityReport]) -> str:
    """Human-readable metric table, one row per dataset version."""
    headers = (
        "Data Name", "Volume", "Richness", "Input Complexity",
        "Prompt Complexity", "Repetition Rate", "High", "Medium", "Low",
    )
    rows = [headers]
    for r in reports:
        ri_str, re_str = format_percent_pair(r.richness)
        lq = r.label_quality
        rows.append(
            (
                r.dataset_version,
                str(r.n),
                ri_str,
                f"{r.input_complexity:.1f}",
                f"{r.prompt_complexity:.1f}",
                re_str,
                f"{lq.get('high', 0) * 100:.2f}%",
                f"{lq.get('medium', 0) * 100:.2f}%",
                f"{lq.get('low', 0) * 100:.2f}%",
            )
        )
    widths = [max(len(row[i]) for row in rows) for i in range(len(headers))]
    lines = []
    for idx, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip())
        if idx == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)
