"""`dialforge` command line: single front door for the whole pipeline.

Stages compose as ingest -> scrub -> seeds -> evolve -> review -> sample ->
assemble -> label -> quality (plus an independent eval stage).  Every run
writes a manifest with the config digest and per-stage artifact digests, so a
dataset version is an auditable, reproducible object rather than a folder
name.

Exit codes: 0 success, 1 validation, 2 runtime, 3 provider exhaustion.
"""

from __future__ import annotations

import hashlib
import json
import logging
import sys
from pathlib import Path

import click

from . import assembly, corpus, evalharness, evolution, labeling, quality
from .errors import DialforgeError, ProviderError, ValidationError
from .providers import Cassette, ChatClient, HashedNgramEmbedder, HttpChatTransport

logger = logging.getLogger(__name__)

PIPELINE_VERSION = "1"

CANONICAL_STAGES = (
    "ingest", "scrub", "seeds", "evolve", "review",
    "sample", "assemble", "label", "quality", "eval",
)

STAGE_DEPS: dict[str, tuple[str, ...]] = {
    "ingest": (),
    "scrub": ("ingest",),
    "seeds": ("scrub",),
    "evolve": ("seeds",),
    "review": ("evolve",),
    "sample": ("review", "scrub"),
    "assemble": ("sample",),
    "label": ("sample", "assemble"),
    "quality": ("label",),
    "eval": (),
}

STAGE_OUTPUTS: dict[str, tuple[str, ...]] = {
    "ingest": ("corpus.valid.jsonl", "ingest_report.json"),
    "scrub": ("corpus.clean.jsonl", "scrub_reports.jsonl"),
    "seeds": ("instructions.seeds.jsonl", "seeds_report.json"),
    "evolve": ("instructions.evolved.jsonl",),
    "review": ("instructions.reviewed.jsonl", "audit.jsonl"),
    "sample": ("pairs.jsonl",),
    "assemble": ("prompts.jsonl",),
    "label": ("samples.jsonl", "label_failures.json"),
    "quality": ("quality_report.json",),
    "eval": ("scoreboard.json",),
}


def _dump(doc, path: Path) -> None:
    path.write_text(
        json.dumps(doc, ensure_ascii=False, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def file_digest(path: Path) -> str:
    return "sha256:" + hashlib.sha256(path.read_bytes()).hexdigest()


def config_digest(cfg: dict) -> str:
    blob = json.dumps(cfg, ensure_ascii=False, sort_keys=True, separators=(",", ":"))
    return "sha256:" + hashlib.sha256(blob.encode("utf-8")).hexdigest()


def load_config(path: str | Path) -> dict:
    p = Path(path)
    if not p.exists():
        raise ValidationError(f"config file not found: {p}")
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config is not valid JSON: {exc}")


# ---------------------------------------------------------------------------
# Config validation


def validate_config_doc(cfg: dict, base_dir: Path) -> list[tuple[str, str]]:
    """Every violated constraint as (config key path, message)."""
    problems: list[tuple[str, str]] = []

    def resolve(p: str) -> Path:
        path = Path(p)
        return path if path.is_absolute() else base_dir / path

    def check_path(key: str, required: bool) -> None:
        value = _get(cfg, key)
        if value is None:
            if required:
                problems.append((key, "required path is missing"))
            return
        if not resolve(value).exists():
            problems.append((key, f"path does not exist: {value}"))

    check_path("corpus", required=True)
    for key in ("templates", "rules", "review.decisions", "eval.testset", "eval.candidates"):
        if _get(cfg, key) is not None:
            check_path(key, required=False)

    mode = _get(cfg, "cassette_mode") or "replay"
    if mode not in Cassette.MODES:
        problems.append(("cassette_mode", f"must be one of {Cassette.MODES}"))
    if _get(cfg, "cassette") is not None and mode == "replay":
        check_path("cassette", required=False)

    for key in ("dedup.threshold", "quality.threshold"):
        value = _get(cfg, key)
        if value is not None and not (isinstance(value, (int, float)) and 0 < value <= 1):
            problems.append((key, f"threshold must be in (0, 1], got {value!r}"))

    k = _get(cfg, "seeds.k")
    if k is not None and (not isinstance(k, int) or k <= 0):
        problems.append(("seeds.k", f"must be a positive integer, got {k!r}"))
    for task in _get(cfg, "seeds.task_types") or []:
        try:
            corpus.TaskType(task)
        except ValueError:
            problems.append(("seeds.task_types", f"unknown task type {task!r}"))

    for op in _get(cfg, "evolution.operators") or []:
        if op not in evolution.operator_names():
            problems.append(("evolution.operators", f"unknown operator {op!r}"))

    policy = _get(cfg, "review.policy")
    if policy is not None and policy not in ("auto-approve", "decisions-file"):
        problems.append(("review.policy", f"must be auto-approve or decisions-file, got {policy!r}"))
    if policy == "decisions-file" and _get(cfg, "review.decisions") is None:
        problems.append(("review.decisions", "required when review.policy is decisions-file"))

    weights = _get(cfg, "sampling.weights")
    if weights is not None:
        any_positive = False
        for name, w in weights.items():
            try:
                labeling.parse_cell(name)
            except ValueError:
                problems.append((f"sampling.weights.{name}", "not a 'scene|task type' cell"))
                continue
            if not isinstance(w, (int, float)) or w < 0 or w != w:
                problems.append((f"sampling.weights.{name}", f"weight must be finite and >= 0, got {w!r}"))
            elif w > 0:
                any_positive = True
        if weights and not any_positive:
            problems.append(("sampling.weights", "at least one weight must be positive"))
    n = _get(cfg, "sampling.n")
    if n is not None and (not isinstance(n, int) or n <= 0):
        problems.append(("sampling.n", f"must be a positive integer, got {n!r}"))

    top_n = _get(cfg, "quality.top_n")
    if top_n is not None and (not isinstance(top_n, int) or top_n < 1):
        problems.append(("quality.top_n", f"must be a positive integer, got {top_n!r}"))
    component = _get(cfg, "quality.component")
    if component is not None and component not in quality.COMPONENTS:
        problems.append(("quality.component", f"must be one of {quality.COMPONENTS}"))
    return problems


def _get(cfg: dict, dotted: str):
    node = cfg
    for part in dotted.split("."):
        if not isinstance(node, dict) or part not in node:
            return None
        node = node[part]
    return node


# ---------------------------------------------------------------------------
# Pipeline runner


class PipelineRun:
    def __init__(self, cfg: dict, base_dir: Path, out_dir: Path, client: ChatClient | None = None):
        self.cfg = cfg
        self.base_dir = base_dir
        self.out = out_dir
        self.out.mkdir(parents=True, exist_ok=True)
        self._client = client
        self.manifest_stages: dict[str, dict] = {}

    # -- helpers

    def resolve(self, key: str) -> Path:
        value = _get(self.cfg, key)
        if value is None:
            raise ValidationError(f"config key '{key}' is required for this stage")
        path = Path(value)
        return path if path.is_absolute() else self.base_dir / path

    def artifact(self, name: str) -> Path:
        return self.out / name

    def client(self) -> ChatClient:
        if self._client is None:
            cassette = None
            if _get(self.cfg, "cassette"):
                cassette = Cassette(self.resolve("cassette"), _get(self.cfg, "cassette_mode") or "replay")
            self._client = ChatClient(
                model=_get(self.cfg, "provider.model") or "dialforge-default",
                transport=HttpChatTransport(),
                cassette=cassette,
                max_concurrency=_get(self.cfg, "provider.max_concurrency") or 4,
            )
        return self._client

    def registry(self) -> assembly.TemplateRegistry:
        if _get(self.cfg, "templates"):
            return assembly.TemplateRegistry.from_file(self.resolve("templates"))
        return assembly.TemplateRegistry.bundled()

    def _require_artifacts(self, stage: str, ran: set[str]) -> None:
        for dep in STAGE_DEPS[stage]:
            if dep in ran:
                continue
            if all(self.artifact(name).exists() for name in STAGE_OUTPUTS[dep]):
                continue
            raise ValidationError(
                f"stage '{stage}' requires the output of stage '{dep}'; run '{dep}' first"
            )

    def _check_write_once(self, stage: str) -> None:
        for name in STAGE_OUTPUTS[stage]:
            if self.artifact(name).exists():
                raise ValidationError(
                    f"artifact {name} already exists; stage outputs are write-once"
                )

    def run(self, stages: list[str]) -> Path:
        unknown = [s for s in stages if s not in CANONICAL_STAGES]
        if unknown:
            raise ValidationError(f"unknown stage(s): {unknown}; valid: {list(CANONICAL_STAGES)}")
        ordered = [s for s in CANONICAL_STAGES if s in stages]
        ran: set[str] = set()
        for stage in ordered:
            self._require_artifacts(stage, ran)
            self._check_write_once(stage)
            logger.info("running stage %s", stage)
            getattr(self, f"stage_{stage}")()
            self.manifest_stages[stage] = {
                "version": PIPELINE_VERSION,
                "outputs": {
                    name: file_digest(self.artifact(name)) for name in STAGE_OUTPUTS[stage]
                },
            }
            ran.add(stage)
        return self.write_manifest()

    def write_manifest(self) -> Path:
        path = self.artifact("manifest.json")
        manifest = {"config_digest": config_digest(self.cfg), "pipeline_version": PIPELINE_VERSION, "stages": {}}
        if path.exists():
            manifest = json.loads(path.read_text(encoding="utf-8"))
        manifest["config_digest"] = config_digest(self.cfg)
        manifest["pipeline_version"] = PIPELINE_VERSION
        manifest.setdefault("stages", {}).update(self.manifest_stages)
        manifest["stages"] = dict(sorted(manifest["stages"].items()))
        _dump(manifest, path)
        return path

    # -- stages

    def stage_ingest(self) -> None:
        dialogues, report = corpus.ingest_corpus(
            self.resolve("corpus"), schema_strict=bool(_get(self.cfg, "strict"))
        )
        corpus.write_corpus(dialogues, self.artifact("corpus.valid.jsonl"))
        _dump(
            {
                "valid": len(dialogues),
                "diagnostics": [
                    {"line": d.line_no, "message": d.message, "kind": d.kind}
                    for d in report.diagnostics
                ],
            },
            self.artifact("ingest_report.json"),
        )

    def stage_scrub(self) -> None:
        dialogues, _ = corpus.ingest_corpus(self.artifact("corpus.valid.jsonl"))
        rules = corpus.load_ruleset(self.resolve("rules") if _get(self.cfg, "rules") else None)
        clean: list[corpus.Dialogue] = []
        with self.artifact("scrub_reports.jsonl").open("w", encoding="utf-8") as fh:
            for d in dialogues:
                scrubbed, report = corpus.scrub_pii(d, rules)
                clean.append(scrubbed)
                fh.write(json.dumps(report.to_record(), ensure_ascii=False, sort_keys=True) + "\n")
        corpus.write_corpus(clean, self.artifact("corpus.clean.jsonl"))

    def stage_seeds(self) -> None:
        dialogues, _ = corpus.ingest_corpus(self.artifact("corpus.clean.jsonl"))
        task_types = [corpus.TaskType(t) for t in (_get(self.cfg, "seeds.task_types") or [])]
        if not task_types:
            raise ValidationError("config key 'seeds.task_types' must list at least one task type")
        k = _get(self.cfg, "seeds.k") or 2
        client = self.client()
        seeds: list[evolution.InstructionRecord] = []
        for dialogue in dialogues:
            for task in task_types:
                seeds.extend(evolution.generate_seeds(dialogue, task, k, client))
        threshold = _get(self.cfg, "dedup.threshold") or evolution.DEFAULT_DEDUP_THRESHOLD
        kept, rejected = evolution.dedup_filter(seeds, [], threshold=threshold)
        store = evolution.InstructionStore()
        for record in kept:
            store.add(record)
        store.save(self.artifact("instructions.seeds.jsonl"))
        _dump(
            {"generated": len(seeds), "kept": len(kept), "rejected_as_duplicate": len(rejected),
             "dedup_threshold": threshold},
            self.artifact("seeds_report.json"),
        )

    def stage_evolve(self) -> None:
        store = evolution.InstructionStore(self.artifact("instructions.seeds.jsonl"))
        operators = _get(self.cfg, "evolution.operators") or ["add-constraints"]
        client = self.client()
        children = []
        for record in store.by_state(evolution.LifecycleState.SEED):
            for op in operators:
                children.append(evolution.evolve(record, op, client))
        for child in children:
            store.add(child)
        store.save(self.artifact("instructions.evolved.jsonl"))

    def stage_review(self) -> None:
        # Deterministic counter clock: pipeline review is scripted, so audit
        # timestamps must not depend on wall time.
        tick = iter(range(10**9))
        store = evolution.InstructionStore(
            self.artifact("instructions.evolved.jsonl"),
            audit_path=self.artifact("audit.jsonl"),
            clock=lambda: float(next(tick)),
        )
        policy = _get(self.cfg, "review.policy") or "auto-approve"
        if policy == "auto-approve":
            for record in store.by_state(evolution.LifecycleState.EVOLVED):
                store.apply_decision(record.id, "keep", reviewer="pipeline:auto")
                store.apply_decision(record.id, "approve", reviewer="pipeline:auto")
        elif policy == "decisions-file":
            with self.resolve("review.decisions").open(encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    d = json.loads(line)
                    store.apply_decision(
                        d["record_id"], d["decision"], text=d.get("text"),
                        note=d.get("note", ""), reviewer=d.get("reviewer", ""),
                    )
        else:
            raise ValidationError(f"unknown review.policy {policy!r}")
        store.save(self.artifact("instructions.reviewed.jsonl"))

    def stage_sample(self) -> None:
        dialogues, _ = corpus.ingest_corpus(self.artifact("corpus.clean.jsonl"))
        store = evolution.InstructionStore(self.artifact("instructions.reviewed.jsonl"))
        weights_cfg = _get(self.cfg, "sampling.weights")
        if not weights_cfg:
            raise ValidationError("config key 'sampling.weights' is required")
        plan = labeling.SamplingPlan(
            weights={labeling.parse_cell(k): float(v) for k, v in weights_cfg.items()},
            target_count=_get(self.cfg, "sampling.n") or 10,
            seed=_get(self.cfg, "sampling.seed") or 0,
            with_replacement=bool(_get(self.cfg, "sampling.with_replacement")),
        )
        pairs = labeling.draw_sample_plan(dialogues, store.all(), plan)
        with self.artifact("pairs.jsonl").open("w", encoding="utf-8") as fh:
            for i, (d, r) in enumerate(pairs):
                fh.write(json.dumps(
                    {"index": i, "dialogue_id": d.id, "instruction_id": r.id},
                    ensure_ascii=False, sort_keys=True,
                ) + "\n")

    def _load_pairs(self):
        dialogues, _ = corpus.ingest_corpus(self.artifact("corpus.clean.jsonl"))
        by_id = {d.id: d for d in dialogues}
        store = evolution.InstructionStore(self.artifact("instructions.reviewed.jsonl"))
        pairs = []
        with self.artifact("pairs.jsonl").open(encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                pairs.append((by_id[rec["dialogue_id"]], store.get(rec["instruction_id"])))
        return pairs

    def stage_assemble(self) -> None:
        registry = self.registry()
        seed = _get(self.cfg, "assembly.seed") or 0
        restructure_prompts = bool(_get(self.cfg, "assembly.restructure"))
        client = self.client() if restructure_prompts and _get(self.cfg, "cassette") else None
        prompts = []
        for i, (dialogue, record) in enumerate(self._load_pairs()):
            prompt = assembly.assemble(registry, record, dialogue, seed=seed + i)
            if restructure_prompts:
                prompt = assembly.restructure(prompt, client)
            prompts.append(prompt)
        assembly.write_prompts(prompts, self.artifact("prompts.jsonl"))

    def stage_label(self) -> None:
        prompts = assembly.read_prompts(self.artifact("prompts.jsonl"))
        store = evolution.InstructionStore(self.artifact("instructions.reviewed.jsonl"))
        entries = [(p, store.get(p.instruction_id).task_type) for p in prompts]
        version = _get(self.cfg, "labeling.dataset_version") or "v0"
        samples, failures = labeling.label_prompts(entries, self.client(), version)
        if _get(self.cfg, "labeling.judge") is not False:
            rubric = None
            if _get(self.cfg, "rubric"):
                rubric = labeling.JudgeRubric.from_file(self.resolve("rubric"))
            samples = labeling.classify_label_quality(samples, self.client(), rubric)
        labeling.write_samples(samples, self.artifact("samples.jsonl"))
        _dump(
            [{"index": f.index, "dialogue_id": f.dialogue_id,
              "instruction_id": f.instruction_id, "error": f.error} for f in failures],
            self.artifact("label_failures.json"),
        )

    def stage_quality(self) -> None:
        samples = labeling.read_samples(self.artifact("samples.jsonl"))
        dialogues, _ = corpus.ingest_corpus(self.artifact("corpus.clean.jsonl"))
        ms = quality.metric_samples(samples, dialogues)
        report = quality.build_report(
            ms,
            dataset_version=_get(self.cfg, "labeling.dataset_version") or "v0",
            tokenizer_id=_get(self.cfg, "quality.tokenizer") or "ref-v1",
            embedder=HashedNgramEmbedder(),
            threshold=_get(self.cfg, "quality.threshold") or quality.DEFAULT_SIMILARITY_THRESHOLD,
            top_n=_get(self.cfg, "quality.top_n") or quality.DEFAULT_TOP_N,
            component=_get(self.cfg, "quality.component") or "full",
        )
        self.artifact("quality_report.json").write_text(report.to_json() + "\n", encoding="utf-8")

    def stage_eval(self) -> None:
        cases = evalharness.read_testset(self.resolve("eval.testset"))
        candidates = evalharness.read_candidates(self.resolve("eval.candidates"))
        rubric = None
        if _get(self.cfg, "eval.rubric"):
            rubric = evalharness.EvalRubric.from_file(self.resolve("eval.rubric"))
        results, summary = evalharness.run_eval(cases, candidates, self.client(), rubric)
        _dump(
            {"results": [r.to_record() for r in results], "summary": summary},
            self.artifact("scoreboard.json"),
        )


# ---------------------------------------------------------------------------
# Click commands


def _fail(exc: Exception) -> None:
    click.echo(f"error: {exc}", err=True)
    if isinstance(exc, ValidationError):
        sys.exit(1)
    if isinstance(exc, ProviderError):
        sys.exit(3)
    if isinstance(exc, DialforgeError):
        sys.exit(2)
    raise exc


def _make_client(model: str | None, cassette: str | None, mode: str) -> ChatClient:
    cas = Cassette(cassette, mode) if cassette else None
    return ChatClient(model=model or "dialforge-default", cassette=cas)


@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None, help="Pipeline config file.")
@click.option("--cassette", "cassette_path", type=click.Path(), default=None, help="Cassette file.")
@click.option("--replay/--record", "replay", default=True, help="Cassette mode.")
@click.option("--seed", type=int, default=None, help="Override RNG seed.")
@click.option("-v", "--verbose", is_flag=True)
@click.pass_context
def main(ctx, config_path, cassette_path, replay, seed, verbose):
    """dialforge: build and evaluate domain fine-tuning data from dialogues."""
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    ctx.obj = {
        "config_path": config_path,
        "cassette": cassette_path,
        "cassette_mode": "replay" if replay else "record",
        "seed": seed,
    }


@main.command()
@click.option("--in", "in_path", required=True, type=click.Path())
@click.option("--strict", is_flag=True)
def ingest(in_path, strict):
    """Validate a corpus file; print a summary of what was readable."""
    try:
        dialogues, report = corpus.ingest_corpus(in_path, schema_strict=strict)
    except DialforgeError as exc:
        _fail(exc)
    click.echo(f"valid dialogues: {len(dialogues)}")
    for diag in report.diagnostics:
        click.echo(f"line {diag.line_no}: [{diag.kind}] {diag.message}")


@main.command()
@click.option("--in", "in_path", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--rules", "rules_path", type=click.Path(), default=None)
@click.option("--report", "report_path", type=click.Path(), default=None)
def scrub(in_path, out_path, rules_path, report_path):
    """Scrub PII from every dialogue in a corpus file."""
    try:
        dialogues, _ = corpus.ingest_corpus(in_path)
        rules = corpus.load_ruleset(rules_path)
        clean, reports = [], []
        for d in dialogues:
            c, r = corpus.scrub_pii(d, rules)
            clean.append(c)
            reports.append(r)
        corpus.write_corpus(clean, out_path)
        if report_path:
            with open(report_path, "w", encoding="utf-8") as fh:
                for r in reports:
                    fh.write(json.dumps(r.to_record(), ensure_ascii=False, sort_keys=True) + "\n")
    except DialforgeError as exc:
        _fail(exc)
    total = sum(len(r.spans) for r in reports)
    click.echo(f"scrubbed {len(clean)} dialogues, {total} spans redacted")


@main.command()
@click.option("--in", "in_path", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
def profile(in_path, out_path):
    """Write scene/source/role/turn/length histograms for a corpus."""
    try:
        dialogues, _ = corpus.ingest_corpus(in_path)
        prof = corpus.corpus_profile(dialogues)
        _dump(prof.to_record(), Path(out_path))
    except DialforgeError as exc:
        _fail(exc)
    click.echo(f"profiled {prof.n} dialogues -> {out_path}")


@main.command()
@click.option("--corpus", "corpus_path", required=True, type=click.Path())
@click.option("--task", "task", required=True, type=str)
@click.option("--k", type=int, default=3)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--cassette", "cassette_path", type=click.Path(), default=None)
@click.option("--record", "record_mode", is_flag=True)
@click.option("--model", default=None)
def seeds(corpus_path, task, k, out_path, cassette_path, record_mode, model):
    """Generate seed instructions for every dialogue in the corpus."""
    try:
        dialogues, _ = corpus.ingest_corpus(corpus_path)
        task_type = corpus.TaskType(task)
        client = _make_client(model, cassette_path, "record" if record_mode else "replay")
        store = evolution.InstructionStore()
        for d in dialogues:
            for rec in evolution.generate_seeds(d, task_type, k, client):
                store.add(rec)
        store.save(out_path)
    except (DialforgeError, ValueError) as exc:
        _fail(exc)
    click.echo(f"wrote {len(store.all())} seeds -> {out_path}")


@main.command()
@click.option("--in", "in_path", required=True, type=click.Path())
@click.option("--operator", required=True, type=str)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--cassette", "cassette_path", type=click.Path(), default=None)
@click.option("--record", "record_mode", is_flag=True)
@click.option("--model", default=None)
def evolve(in_path, operator, out_path, cassette_path, record_mode, model):
    """Evolve every Seed/ScreenedKept record with the named operator."""
    try:
        store = evolution.InstructionStore(in_path)
        client = _make_client(model, cassette_path, "record" if record_mode else "replay")
        children = [
            evolution.evolve(r, operator, client)
            for r in store.all()
            if r.state in evolution.EVOLVABLE_STATES
        ]
        for child in children:
            store.add(child)
        store.save(out_path)
    except DialforgeError as exc:
        _fail(exc)
    click.echo(f"evolved {len(children)} records -> {out_path}")


@main.command()
@click.option("--in", "in_path", required=True, type=click.Path())
@click.option("--pool", "pool_path", type=click.Path(), default=None)
@click.option("--threshold", type=float, default=evolution.DEFAULT_DEDUP_THRESHOLD)
@click.option("--out", "out_path", required=True, type=click.Path())
def dedup(in_path, pool_path, threshold, out_path):
    """Drop candidates semantically too close to the pool or each other."""
    try:
        candidates = evolution.InstructionStore(in_path).all()
        pool = evolution.InstructionStore(pool_path).all() if pool_path else []
        kept, rejected = evolution.dedup_filter(candidates, pool, threshold)
        out_store = evolution.InstructionStore()
        for r in kept:
            out_store.add(r)
        out_store.save(out_path)
    except DialforgeError as exc:
        _fail(exc)
    click.echo(f"kept {len(kept)}, rejected {len(rejected)} duplicates -> {out_path}")


@main.command()
@click.option("--instructions", "instructions_path", required=True, type=click.Path())
@click.option("--corpus", "corpus_path", required=True, type=click.Path())
@click.option("--templates", "templates_path", type=click.Path(), default=None)
@click.option("--seed", type=int, default=0)
@click.option("--restructure", "do_restructure", is_flag=True)
@click.option("--out", "out_path", required=True, type=click.Path())
def assemble(instructions_path, corpus_path, templates_path, seed, do_restructure, out_path):
    """Assemble prompts for every Approved instruction over its scene's dialogues."""
    try:
        registry = (
            assembly.TemplateRegistry.from_file(templates_path)
            if templates_path
            else assembly.TemplateRegistry.bundled()
        )
        dialogues, _ = corpus.ingest_corpus(corpus_path)
        store = evolution.InstructionStore(instructions_path)
        prompts = []
        i = 0
        for record in store.by_state(evolution.LifecycleState.APPROVED):
            for dialogue in dialogues:
                if dialogue.scene != record.scene:
                    continue
                prompt = assembly.assemble(registry, record, dialogue, seed=seed + i)
                if do_restructure:
                    prompt = assembly.restructure(prompt, client=None)
                prompts.append(prompt)
                i += 1
        assembly.write_prompts(prompts, out_path)
    except DialforgeError as exc:
        _fail(exc)
    click.echo(f"assembled {len(prompts)} prompts -> {out_path}")


@main.command()
@click.option("--corpus", "corpus_path", required=True, type=click.Path())
@click.option("--instructions", "instructions_path", required=True, type=click.Path())
@click.option("--weights", "weights_path", required=True, type=click.Path())
@click.option("--n", "target", required=True, type=int)
@click.option("--seed", type=int, default=0)
@click.option("--with-replacement", is_flag=True)
@click.option("--out", "out_path", required=True, type=click.Path())
def sample(corpus_path, instructions_path, weights_path, target, seed, with_replacement, out_path):
    """Draw weighted (dialogue, instruction) pairs into a plan file."""
    try:
        dialogues, _ = corpus.ingest_corpus(corpus_path)
        store = evolution.InstructionStore(instructions_path)
        weights_doc = json.loads(Path(weights_path).read_text(encoding="utf-8"))
        plan = labeling.SamplingPlan(
            weights={labeling.parse_cell(k): float(v) for k, v in weights_doc.items()},
            target_count=target,
            seed=seed,
            with_replacement=with_replacement,
        )
        pairs = labeling.draw_sample_plan(dialogues, store.all(), plan)
        with open(out_path, "w", encoding="utf-8") as fh:
            for i, (d, r) in enumerate(pairs):
                fh.write(json.dumps(
                    {"index": i, "dialogue_id": d.id, "instruction_id": r.id},
                    ensure_ascii=False, sort_keys=True) + "\n")
    except DialforgeError as exc:
        _fail(exc)
    click.echo(f"drew {len(pairs)} pairs -> {out_path}")


@main.command("judge-labels")
@click.option("--in", "in_path", required=True, type=click.Path())
@click.option("--rubric", "rubric_path", type=click.Path(), default=None)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--cassette", "cassette_path", type=click.Path(), default=None)
@click.option("--record", "record_mode", is_flag=True)
@click.option("--model", default=None)
def judge_labels(in_path, rubric_path, out_path, cassette_path, record_mode, model):
    """Classify every sample's label quality as high/medium/low."""
    try:
        samples = labeling.read_samples(in_path)
        rubric = labeling.JudgeRubric.from_file(rubric_path) if rubric_path else None
        client = _make_client(model, cassette_path, "record" if record_mode else "replay")
        judged = labeling.classify_label_quality(samples, client, rubric)
        labeling.write_samples(judged, out_path)
    except DialforgeError as exc:
        _fail(exc)
    counts = {}
    for s in judged:
        counts[s.judge_class.value] = counts.get(s.judge_class.value, 0) + 1
    click.echo(f"judged {len(judged)} samples: {counts}")


@main.command("quality")
@click.option("--in", "in_path", required=True, type=click.Path())
@click.option("--corpus", "corpus_path", required=True, type=click.Path())
@click.option("--threshold", type=float, default=quality.DEFAULT_SIMILARITY_THRESHOLD)
@click.option("--top-n", "top_n", type=int, default=quality.DEFAULT_TOP_N)
@click.option("--tokenizer", default="ref-v1")
@click.option("--component", default="full")
@click.option("--version", "dataset_version", default="v0")
@click.option("--out", "out_path", required=True, type=click.Path())
def quality_cmd(in_path, corpus_path, threshold, top_n, tokenizer, component, dataset_version, out_path):
    """Compute the quality report for a labeled dataset."""
    try:
        samples = labeling.read_samples(in_path)
        dialogues, _ = corpus.ingest_corpus(corpus_path)
        ms = quality.metric_samples(samples, dialogues)
        report = quality.build_report(
            ms, dataset_version, tokenizer_id=tokenizer,
            threshold=threshold, top_n=top_n, component=component,
        )
        Path(out_path).write_text(report.to_json() + "\n", encoding="utf-8")
    except DialforgeError as exc:
        _fail(exc)
    click.echo(quality.render_table([report]))


@main.command("eval")
@click.option("--testset", "testset_path", required=True, type=click.Path())
@click.option("--candidates", "candidates_path", required=True, type=click.Path())
@click.option("--rubric", "rubric_path", type=click.Path(), default=None)
@click.option("--cassette", "cassette_path", type=click.Path(), default=None)
@click.option("--record", "record_mode", is_flag=True)
@click.option("--model", default=None)
@click.option("--out", "out_path", required=True, type=click.Path())
def eval_cmd(testset_path, candidates_path, rubric_path, cassette_path, record_mode, model, out_path):
    """Judge candidate outputs against the test set's reference answers."""
    try:
        cases = evalharness.read_testset(testset_path)
        candidates = evalharness.read_candidates(candidates_path)
        rubric = evalharness.EvalRubric.from_file(rubric_path) if rubric_path else None
        client = _make_client(model, cassette_path, "record" if record_mode else "replay")
        results, summary = evalharness.run_eval(cases, candidates, client, rubric)
        _dump({"results": [r.to_record() for r in results], "summary": summary}, Path(out_path))
    except DialforgeError as exc:
        _fail(exc)
    click.echo(json.dumps(summary["overall"], ensure_ascii=False))


@main.command("testset-profile")
@click.option("--in", "in_path", required=True, type=click.Path())
def testset_profile(in_path):
    """Histogram a test set by task type and output format."""
    try:
        cases = evalharness.read_testset(in_path)
        click.echo(json.dumps(evalharness.profile_testset(cases), ensure_ascii=False, indent=2, sort_keys=True))
    except DialforgeError as exc:
        _fail(exc)


@main.command()
@click.option("--store", "store_path", required=True, type=click.Path())
@click.option("--port", type=int, default=8321)
@click.option("--reports", "reports_dir", type=click.Path(), default=None)
@click.option("--audit", "audit_path", type=click.Path(), default=None)
def serve(store_path, port, reports_dir, audit_path):
    """Start the review service over an instruction store."""
    from .review import serve as run_service

    run_service(store_path, port, reports_dir, audit_path)


@main.command("validate-config")
@click.argument("config_file", type=click.Path())
def validate_config(config_file):
    """List every violated config constraint; nonzero exit iff any."""
    try:
        cfg = load_config(config_file)
    except DialforgeError as exc:
        _fail(exc)
    problems = validate_config_doc(cfg, Path(config_file).resolve().parent)
    for key, message in problems:
        click.echo(f"{key}: {message}")
    if problems:
        sys.exit(1)
    click.echo("config ok")


@main.command("run")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--stages", default=",".join(CANONICAL_STAGES[:-1]),
              help="Comma-separated stage subset (canonical order is enforced).")
def run(config_path, out_dir, stages):
    """Run pipeline stages and write the run manifest."""
    try:
        cfg = load_config(config_path)
        base_dir = Path(config_path).resolve().parent
        problems = validate_config_doc(cfg, base_dir)
        if problems:
            for key, message in problems:
                click.echo(f"{key}: {message}", err=True)
            raise ValidationError("config validation failed")
        stage_list = [s.strip() for s in stages.split(",") if s.strip()]
        runner = PipelineRun(cfg, base_dir, Path(out_dir))
        manifest_path = runner.run(stage_list)
    except DialforgeError as exc:
        _fail(exc)
    click.echo(f"manifest -> {manifest_path}")


if __name__ == "__main__":
    main()
