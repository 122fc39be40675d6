"""End-to-end protocol runner: corpus synthesis, joint pre-training,
fine-tune / few-shot / zero-shot adaptation, two-task continual runs,
and report aggregation.

Every command is a pure function of (config, input files, seed): file
outputs carry no wall-clock times or absolute paths, so a rerun into a
fresh directory is byte-identical.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import (
    ConfigError,
    DistractorExhaustionError,
    MalformedGenerationError,
    PipelineHealthError,
    ResolutionError,
    SamplingError,
    StageError,
)
from .fileio import atomic_write_text, file_sha256
from .metrics import EvalReport, em, mc_accuracy, rouge_l, token_f1, yesno_accuracy
from .model import (
    GenerationConfig,
    ModelConfig,
    generate,
    init_model_params,
    load_checkpoint,
    save_checkpoint,
)
from .prompt_bank import PromptBank
from .schema import (
    PromptConfig,
    QAInstance,
    compile_instance,
    hard_prompt_token,
    parse_instance,
    serialize_instance,
)
from .synth import (
    Passage,
    PoolDistractorSampler,
    Seq2SeqText,
    SynthConfig,
    filter_pairs,
    gen_distractors,
    generate_qa,
    make_yesno,
    score_pair,
)
from .tokenizer import EOS, Vocab, build_vocab, decode, encode, load_vocab, save_vocab
from .toyworld import RELATIONS, ToyWorld, gen_toy_corpus, train_dev_split, world_vocabulary
from .train import TrainSettings, train_model

FORMAT_CODES = {"ex": "extractive", "ab": "abstractive", "mc": "multichoice", "yn": "yesno"}
TASK_VARIANTS = "abcdefghij"
PRETRAIN_FORMATS = ("extractive", "abstractive", "multichoice")
FORMAT_METRIC = {
    "extractive": "EM",
    "abstractive": "ROUGE-L",
    "multichoice": "Accuracy",
    "yesno": "Accuracy",
}


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass
class RunConfig:
    """Flat-JSON run settings; all fields have desk-scale defaults."""

    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 2
    d_ff: int = 128
    max_len: int = 112
    dropout: float = 0.0
    prompt_len: int = 8
    lr: float = 3e-4
    prompt_lr: float = 3e-3
    batch_size: int = 16
    grad_accum: int = 1
    weight_decay: float = 0.0
    pretrain_steps: int = 700
    adapt_steps: int = 400
    finetune_steps: int = 600
    fewshot_k: int = 32
    eval_every: int = 100
    seed_model_steps: int = 300
    seed_task_size: int = 48
    task_train_size: int = 40
    task_dev_size: int = 20
    synth_worlds: int = 40
    passages_per_world: int = 6
    task_worlds: int = 4
    keep_ratio: float = 0.5
    threshold: float = -1.0
    max_new_tokens: int = 10
    include_yesno_pretraining: bool = False
    seed: int = 0

    @classmethod
    def load(cls, path: str | None) -> "RunConfig":
        if path is None:
            return cls()
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict):
            raise ConfigError(f"{path} is not a flat JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(
            d_model=self.d_model,
            n_layers=self.n_layers,
            n_heads=self.n_heads,
            d_ff=self.d_ff,
            vocab_size=vocab_size,
            max_len=self.max_len,
            dropout=self.dropout,
        )

    def generation_config(self) -> GenerationConfig:
        return GenerationConfig(max_new_tokens=self.max_new_tokens)

    def synth_config(self) -> SynthConfig:
        if self.threshold >= 0:
            return SynthConfig(keep_ratio=None, threshold=self.threshold, seed=self.seed)
        return SynthConfig(keep_ratio=self.keep_ratio, seed=self.seed)


# ---------------------------------------------------------------------------
# task registry
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TaskSpec:
    name: str
    format: str
    world_seed: int


def resolve_task(name: str) -> TaskSpec:
    """Task names follow toy-<fmt>-<variant> or seed-<fmt>."""
    parts = name.split("-")
    if len(parts) == 3 and parts[0] == "toy" and parts[1] in FORMAT_CODES:
        fmt = FORMAT_CODES[parts[1]]
        variant = parts[2]
        if len(variant) == 1 and variant in TASK_VARIANTS:
            fmt_idx = list(FORMAT_CODES.values()).index(fmt)
            return TaskSpec(name, fmt, 100 + 10 * fmt_idx + TASK_VARIANTS.index(variant))
    if len(parts) == 2 and parts[0] == "seed" and parts[1] in FORMAT_CODES:
        fmt = FORMAT_CODES[parts[1]]
        fmt_idx = list(FORMAT_CODES.values()).index(fmt)
        return TaskSpec(name, fmt, 900 + fmt_idx)
    raise ConfigError(f"unknown task name {name!r} (expected toy-<fmt>-<a..j> or seed-<fmt>)")


def registry_task_names() -> list[str]:
    names = [f"seed-{code}" for code in FORMAT_CODES]
    for code in FORMAT_CODES:
        names.extend(f"toy-{code}-{v}" for v in TASK_VARIANTS)
    return names


def task_worlds(spec: TaskSpec, cfg: RunConfig) -> list[ToyWorld]:
    """A task is a family of fact worlds, like a dataset of many articles."""
    return [
        ToyWorld(name=f"{spec.name}.{j}", seed=spec.world_seed * 100 + j)
        for j in range(cfg.task_worlds)
    ]


def task_corpora(spec: TaskSpec, cfg: RunConfig) -> tuple[list[QAInstance], list[QAInstance]]:
    """The task's fixed train/dev splits (independent of the run seed)."""
    worlds = task_worlds(spec, cfg)
    n = cfg.task_train_size + cfg.task_dev_size
    per_world = (n + len(worlds) - 1) // len(worlds)
    per_lists = []
    for world in worlds:
        insts = gen_toy_corpus(spec.format, world, per_world, split_seed=spec.world_seed)
        for inst in insts:
            inst.task = spec.name
        per_lists.append(insts)
    # interleave worlds so both splits cover the whole family
    rounds = max(len(lst) for lst in per_lists)
    interleaved = [lst[i] for i in range(rounds) for lst in per_lists if i < len(lst)]
    return train_dev_split(interleaved[:n], cfg.task_dev_size)


def build_run_vocab() -> Vocab:
    """One vocabulary covering all worlds, formats, and registry tasks."""
    specials = [hard_prompt_token("domain", "toyworld")]
    specials += [hard_prompt_token("format", f) for f in FORMAT_CODES.values()]
    specials += [hard_prompt_token("task", f) for f in FORMAT_CODES.values()]
    specials += [hard_prompt_token("task", t) for t in registry_task_names()]
    return build_vocab([" ".join(world_vocabulary())], specials=specials)


def ensure_vocab(out_dir: str) -> Vocab:
    path = os.path.join(out_dir, "vocab.txt")
    if os.path.exists(path):
        return load_vocab(path)
    vocab = build_run_vocab()
    save_vocab(vocab, path)
    return vocab


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def score_prediction(inst: QAInstance, prediction: str) -> float:
    if inst.format == "extractive":
        return em(prediction, inst.answer)
    if inst.format == "abstractive":
        return rouge_l(prediction, inst.answer)
    if inst.format == "multichoice":
        return mc_accuracy(prediction, inst.options, inst.options.index(inst.answer))
    return yesno_accuracy(prediction, inst.answer)


def evaluate_instances(
    params,
    bank,
    instances: list[QAInstance],
    vocab: Vocab,
    pcfg: PromptConfig,
    gc: GenerationConfig,
    task_prompt_override: np.ndarray | None = None,
) -> EvalReport:
    rows = []
    for inst in instances:
        ci = compile_instance(inst, vocab, pcfg)
        overrides = None
        if task_prompt_override is not None:
            overrides = {("task", inst.task): task_prompt_override}
        result = generate(ci, params, bank, gc, overrides=overrides)
        prediction = decode(vocab, result.ids)
        rows.append(
            {
                "example_id": inst.id,
                "score": score_prediction(inst, prediction),
                "prediction": prediction,
                "gold": inst.answer,
            }
        )
    return EvalReport.from_rows(FORMAT_METRIC[instances[0].format], rows)


def training_items(instances: list[QAInstance], vocab: Vocab, pcfg: PromptConfig):
    return [
        (compile_instance(inst, vocab, pcfg), encode(vocab, inst.answer) + [EOS])
        for inst in instances
    ]


# ---------------------------------------------------------------------------
# corpus synthesis
# ---------------------------------------------------------------------------

SEED_MODEL_CONFIG = {"d_model": 48, "n_layers": 1, "n_heads": 2, "d_ff": 96}


def _seed_model_config(cfg: RunConfig, vocab_size: int) -> ModelConfig:
    return ModelConfig(
        d_model=SEED_MODEL_CONFIG["d_model"],
        n_layers=SEED_MODEL_CONFIG["n_layers"],
        n_heads=SEED_MODEL_CONFIG["n_heads"],
        d_ff=SEED_MODEL_CONFIG["d_ff"],
        vocab_size=vocab_size,
        max_len=cfg.max_len,
    )


def train_seed_models(cfg: RunConfig, fmt: str, vocab: Vocab, out_dir: str) -> tuple[str, str]:
    """Train (or reuse) the generator and filter for a format's seed task.

    Generator: passage -> "question [sep] answer". Filter: passage [sep]
    question -> answer. Returns the two checkpoint paths.
    """
    code = [c for c, f in FORMAT_CODES.items() if f == fmt][0]
    gen_path = os.path.join(out_dir, f"seed_{code}_gen.ckpt")
    filter_path = os.path.join(out_dir, f"seed_{code}_filter.ckpt")
    if os.path.exists(gen_path) and os.path.exists(filter_path):
        return gen_path, filter_path
    spec = resolve_task(f"seed-{code}")
    seed_instances = []
    per_world = (cfg.seed_task_size + cfg.task_worlds - 1) // cfg.task_worlds
    for world in task_worlds(spec, cfg):
        seed_instances.extend(
            gen_toy_corpus(fmt, world, per_world, split_seed=spec.world_seed)
        )
    mconf = _seed_model_config(cfg, vocab.size)

    gen_items = []
    filter_items = []
    for inst in seed_instances:
        src_ids = encode(vocab, inst.passage)
        gen_target = encode(vocab, f"{inst.question} [sep] {inst.answer}") + [EOS]
        gen_items.append((_plain_input(src_ids), gen_target))
        filter_src = encode(vocab, f"{inst.passage} [sep] {inst.question}")
        filter_items.append((_plain_input(filter_src), encode(vocab, inst.answer) + [EOS]))

    settings = TrainSettings(
        lr=1e-3, batch_size=cfg.batch_size, steps=cfg.seed_model_steps, seed=cfg.seed
    )
    gen_params = init_model_params(mconf, seed=cfg.seed + 17)
    train_model(gen_params, None, gen_items, settings)
    save_checkpoint(gen_params, gen_path)
    filter_params = init_model_params(mconf, seed=cfg.seed + 18)
    train_model(filter_params, None, filter_items, settings)
    save_checkpoint(filter_params, filter_path)
    return gen_path, filter_path


def _plain_input(ids):
    from .schema import CompiledInput

    return CompiledInput(ids=ids, soft_slots=[])


def synthesize_format(
    cfg: RunConfig, fmt: str, vocab: Vocab, out_dir: str,
    gen_ckpt: str | None = None, filter_ckpt: str | None = None,
) -> tuple[str, str]:
    """Generate, score, filter, and decorate a format's corpus.

    Writes <out>/corpus_<fmt>.jsonl plus a stats sidecar; returns both
    paths. Yes/no corpora skip the generator entirely.
    """
    fmt_idx = list(FORMAT_CODES.values()).index(fmt)
    worlds = [
        ToyWorld(name=f"pre{fmt_idx}w{w}", seed=777000 + 100 * fmt_idx + w)
        for w in range(cfg.synth_worlds)
    ]
    passages = []
    world_of = {}
    for world in worlds:
        for passage in world.make_passages(cfg.passages_per_world, seed=cfg.seed):
            passages.append(passage)
            world_of[passage.id] = world
    gc = GenerationConfig(max_new_tokens=24)
    stats = {"generated": 0, "malformed": 0, "discarded": 0, "kept": 0}
    instances: list[QAInstance] = []
    provenance: dict

    if fmt == "yesno":
        gen_name = filter_name = "none"
        kept_pairs = []
        for i, passage in enumerate(passages):
            stats["generated"] += 1
            made = make_yesno(passage, world_of[passage.id], seed=cfg.seed * 1000003 + i)
            if made is None:
                stats["discarded"] += 1
                continue
            question, answer = made
            kept_pairs.append((passage, question, answer, None, 0.0))
    else:
        if gen_ckpt is None or filter_ckpt is None:
            gen_ckpt, filter_ckpt = train_seed_models(cfg, fmt, vocab, out_dir)
        gen_name = os.path.basename(gen_ckpt)
        filter_name = os.path.basename(filter_ckpt)
        gen_model = Seq2SeqText(load_checkpoint(gen_ckpt), vocab, gc)
        filter_model = Seq2SeqText(load_checkpoint(filter_ckpt), vocab)
        pairs = []
        by_passage = {}
        for passage in passages:
            stats["generated"] += 1
            try:
                pair = generate_qa(gen_model, passage, gc, format=fmt)
            except MalformedGenerationError:
                stats["malformed"] += 1
                continue
            pair.score = score_pair(filter_model, passage, pair.question, pair.answer)
            pairs.append(pair)
            by_passage[passage.id] = passage
        if stats["generated"] and stats["malformed"] / stats["generated"] > 0.5:
            raise PipelineHealthError(
                f"{stats['malformed']} of {stats['generated']} generations malformed for {fmt}"
            )
        kept = filter_pairs(pairs, cfg.synth_config())
        stats["discarded"] += len(pairs) - len(kept)
        kept_pairs = []
        sampler = PoolDistractorSampler(
            sorted({o for rel in RELATIONS.values() for o in rel.objects})
        )
        for j, pair in enumerate(kept):
            passage = by_passage[pair.passage_id]
            options = None
            if fmt == "multichoice":
                try:
                    _, options, _ = gen_distractors(
                        sampler, passage, pair.question, pair.answer, seed=cfg.seed * 7919 + j
                    )
                except DistractorExhaustionError:
                    stats["discarded"] += 1
                    continue
            kept_pairs.append((passage, pair.question, pair.answer, options, pair.score))

    provenance = {"generator_ckpt": gen_name, "filter_ckpt": filter_name, "seed": cfg.seed}
    lines = []
    for j, (passage, question, answer, options, score) in enumerate(kept_pairs):
        inst = QAInstance(
            id=f"{fmt}-{passage.id}-{j:05d}",
            format=fmt,
            task=fmt,
            domain="toyworld",
            question=question,
            passage=passage.text,
            options=options,
            answer=answer,
        )
        instances.append(inst)
        lines.append(serialize_instance(inst, extra={"score": score, "provenance": provenance}))
    stats["kept"] = len(instances)

    corpus_path = os.path.join(out_dir, f"corpus_{fmt}.jsonl")
    stats_path = os.path.join(out_dir, f"corpus_{fmt}.stats.json")
    atomic_write_text(corpus_path, "".join(line + "\n" for line in lines))
    atomic_write_text(stats_path, json.dumps(stats, sort_keys=True) + "\n")
    return corpus_path, stats_path


# ---------------------------------------------------------------------------
# pre-training and adaptation
# ---------------------------------------------------------------------------


def read_corpus(path: str) -> list[QAInstance]:
    with open(path, encoding="utf-8") as fh:
        return [parse_instance(line) for line in fh if line.strip()]


def cmd_pretrain(cfg: RunConfig, out_dir: str, corpora: dict[str, str] | None = None):
    """Joint multi-format pre-training; registers format, initial-task,
    and domain prompts, then trains everything together."""
    vocab = ensure_vocab(out_dir)
    formats = list(PRETRAIN_FORMATS)
    if cfg.include_yesno_pretraining:
        formats.append("yesno")
    if corpora is None:
        corpora = {f: os.path.join(out_dir, f"corpus_{f}.jsonl") for f in formats}
    instances = []
    for fmt, path in corpora.items():
        for inst in read_corpus(path):
            if inst.format != fmt:
                raise ConfigError(f"{path} holds {inst.format!r} instances, expected {fmt!r}")
            instances.append(inst)

    pcfg = PromptConfig(m=cfg.prompt_len)
    bank = PromptBank(m=cfg.prompt_len, d_model=cfg.d_model)
    bank.init_prompt("domain", "toyworld", random=(cfg.seed * 31 + 1, 0.02))
    for i, fmt in enumerate(corpora):
        bank.init_prompt("format", fmt, random=(cfg.seed * 31 + 2 + i, 0.02))
        bank.init_prompt("task", fmt, random=(cfg.seed * 31 + 20 + i, 0.02))

    params = init_model_params(cfg.model_config(vocab.size), seed=cfg.seed)
    items = training_items(instances, vocab, pcfg)
    settings = TrainSettings(
        lr=cfg.lr,
        batch_size=cfg.batch_size,
        steps=cfg.pretrain_steps,
        seed=cfg.seed,
        grad_accum=cfg.grad_accum,
        weight_decay=cfg.weight_decay,
        prompt_lr=cfg.prompt_lr,
    )
    losses = train_model(params, bank, items, settings, prompt_keys=tuple(bank.sorted_keys()))

    ckpt_path = os.path.join(out_dir, "pretrained.ckpt")
    bank_path = os.path.join(out_dir, "pretrained.bank")
    save_checkpoint(params, ckpt_path)
    bank.save(bank_path)
    curve = "".join(f"{i + 1},{loss:.6f}\n" for i, loss in enumerate(losses))
    atomic_write_text(os.path.join(out_dir, "pretrain_loss.csv"), "step,loss\n" + curve)
    return ckpt_path, bank_path, losses


def init_adaptation_prompts(bank: PromptBank, task: str, fmt: str, seed: int) -> None:
    """New task prompt copies its format prompt; a brand-new format (and
    missing domain) falls back to seeded random entries."""
    if bank.has("format", fmt):
        bank.init_prompt("task", task, copy_of=("format", fmt))
    else:
        bank.init_prompt("format", fmt, random=(seed * 53 + 5, 0.02))
        bank.init_prompt("task", task, random=(seed * 53 + 6, 0.02))
    if not bank.has("domain", "toyworld"):
        bank.init_prompt("domain", "toyworld", random=(seed * 53 + 7, 0.02))


def _adapt(
    cfg: RunConfig,
    out_dir: str,
    task: str,
    ckpt_path: str,
    bank_path: str,
    steps: int,
    train_instances: list[QAInstance],
    dev_instances: list[QAInstance],
    tag: str,
    curve_path: str | None = None,
):
    vocab = ensure_vocab(out_dir)
    params = load_checkpoint(ckpt_path)
    bank = PromptBank.load(bank_path)
    spec = resolve_task(task)
    pcfg = PromptConfig(m=cfg.prompt_len)
    init_adaptation_prompts(bank, task, spec.format, cfg.seed)

    items = training_items(train_instances, vocab, pcfg)
    gc = cfg.generation_config()
    curve_rows: list[tuple[int, float]] = []

    def hook(step: int):
        if cfg.eval_every and step % cfg.eval_every == 0:
            report = evaluate_instances(params, bank, dev_instances, vocab, pcfg, gc)
            curve_rows.append((step, report.value))

    settings = TrainSettings(
        lr=cfg.lr,
        batch_size=cfg.batch_size,
        steps=steps,
        seed=cfg.seed,
        grad_accum=cfg.grad_accum,
        weight_decay=cfg.weight_decay,
        prompt_lr=cfg.prompt_lr,
    )
    train_model(
        params, bank, items, settings, prompt_keys=(("task", task),),
        step_hook=hook if curve_path else None,
    )
    report = evaluate_instances(params, bank, dev_instances, vocab, pcfg, gc)

    new_ckpt = os.path.join(out_dir, f"{tag}.ckpt")
    new_bank = os.path.join(out_dir, f"{tag}.bank")
    save_checkpoint(params, new_ckpt)
    bank.save(new_bank)
    report.write_csv(os.path.join(out_dir, f"{tag}.csv"))
    if curve_path:
        rows = "".join(f"{s},{v:.6f}\n" for s, v in curve_rows)
        atomic_write_text(curve_path, "step,metric\n" + rows)
    return new_ckpt, new_bank, report


def cmd_fewshot(
    cfg: RunConfig, out_dir: str, task: str, k: int | None = None,
    ckpt_path: str | None = None, bank_path: str | None = None, tag: str | None = None,
):
    """Sample exactly k training instances with the run seed and adapt."""
    k = cfg.fewshot_k if k is None else k
    ckpt_path = ckpt_path or os.path.join(out_dir, "pretrained.ckpt")
    bank_path = bank_path or os.path.join(out_dir, "pretrained.bank")
    spec = resolve_task(task)
    train_split, dev_split = task_corpora(spec, cfg)
    if k > len(train_split):
        raise SamplingError(f"cannot sample {k} of {len(train_split)} training instances")
    rng = np.random.default_rng([cfg.seed, spec.world_seed, 17])
    picked = rng.choice(len(train_split), size=k, replace=False)
    sampled = [train_split[int(i)] for i in sorted(picked)]
    tag = tag or f"fewshot_{task}"
    return _adapt(
        cfg, out_dir, task, ckpt_path, bank_path, cfg.adapt_steps, sampled, dev_split,
        tag=tag, curve_path=os.path.join(out_dir, f"{tag}.curve.csv"),
    )


def cmd_finetune(
    cfg: RunConfig, out_dir: str, task: str,
    ckpt_path: str | None = None, bank_path: str | None = None,
):
    """Full-data adaptation on the task's train split."""
    ckpt_path = ckpt_path or os.path.join(out_dir, "pretrained.ckpt")
    bank_path = bank_path or os.path.join(out_dir, "pretrained.bank")
    spec = resolve_task(task)
    train_split, dev_split = task_corpora(spec, cfg)
    return _adapt(
        cfg, out_dir, task, ckpt_path, bank_path, cfg.finetune_steps, train_split, dev_split,
        tag=f"finetune_{task}",
    )


def cmd_zeroshot(
    cfg: RunConfig, out_dir: str, task: str,
    ckpt_path: str | None = None, bank_path: str | None = None,
) -> EvalReport:
    """Evaluation only; the task prompt resolves through the format level."""
    ckpt_path = ckpt_path or os.path.join(out_dir, "pretrained.ckpt")
    bank_path = bank_path or os.path.join(out_dir, "pretrained.bank")
    vocab = ensure_vocab(out_dir)
    params = load_checkpoint(ckpt_path)
    bank = PromptBank.load(bank_path)
    spec = resolve_task(task)
    if not bank.has("format", spec.format):
        raise ResolutionError(f"format {spec.format!r} was not pre-trained")
    matrix = bank.resolve_for_zero_shot(task, spec.format)
    _, dev_split = task_corpora(spec, cfg)
    report = evaluate_instances(
        params, bank, dev_split, vocab, PromptConfig(m=cfg.prompt_len),
        cfg.generation_config(), task_prompt_override=matrix,
    )
    report.write_csv(os.path.join(out_dir, f"zeroshot_{task}.csv"))
    return report


# ---------------------------------------------------------------------------
# continual learning
# ---------------------------------------------------------------------------


@dataclass
class ContinualReport:
    task_a: str
    task_b: str
    s_a: float
    s_ab: float
    s_ab_restored: float
    drop_direct: float
    drop_restored: float

    def to_dict(self) -> dict:
        d = asdict(self)
        d["drop_direct_pct"] = round(100.0 * self.drop_direct, 2)
        d["drop_restored_pct"] = round(100.0 * self.drop_restored, 2)
        return d


def compute_drops(s_a: float, s_ab: float, s_ab_restored: float) -> tuple[float, float]:
    """Fractional performance drops relative to the original task-A score."""
    if s_a == 0:
        raise StageError("[stage:drops] task-A score is zero, drops are undefined")
    return (s_a - s_ab) / s_a, (s_a - s_ab_restored) / s_a


def cmd_continual(cfg: RunConfig, out_dir: str, task_a: str, task_b: str) -> ContinualReport:
    """Few-shot A, then B on top; score A directly and with its prompt restored.

    The restored configuration loads the task-A prompt saved after stage
    A into the stage-B model, exercising bank persistence end to end.
    """
    vocab = ensure_vocab(out_dir)
    pcfg = PromptConfig(m=cfg.prompt_len)
    gc = cfg.generation_config()
    spec_a = resolve_task(task_a)
    _, dev_a = task_corpora(spec_a, cfg)

    def stage(tag, fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except Exception as exc:
            raise StageError(f"[stage:{tag}] {exc}") from exc

    tag_a = f"continual_{task_a}__{task_b}_stage_a"
    ckpt_a, bank_a_path, report_a = stage(
        "fewshot-a", cmd_fewshot, cfg, out_dir, task_a, tag=tag_a
    )
    s_a = report_a.value

    tag_b = f"continual_{task_a}__{task_b}_stage_b"
    ckpt_b, bank_b_path, _ = stage(
        "fewshot-b", cmd_fewshot, cfg, out_dir, task_b,
        ckpt_path=ckpt_a, bank_path=bank_a_path, tag=tag_b,
    )

    params_b = stage("load-b", load_checkpoint, ckpt_b)
    bank_b = stage("load-b", PromptBank.load, bank_b_path)

    # direct: the task-B prompt sits in task A's slot
    direct = stage(
        "eval-direct", evaluate_instances,
        params_b, bank_b, dev_a, vocab, pcfg, gc,
        task_prompt_override=bank_b.get("task", task_b),
    )
    s_ab = direct.value

    # restored: load the stage-A prompt back into the B-trained bank
    prompt_a = stage("restore", lambda: PromptBank.load(bank_a_path).get("task", task_a))
    stage("restore", bank_b.swap, "task", task_a, prompt_a)
    restored_bank_path = os.path.join(out_dir, f"continual_{task_a}__{task_b}_restored.bank")
    bank_b.save(restored_bank_path)
    restored = stage(
        "eval-restored", evaluate_instances, params_b, bank_b, dev_a, vocab, pcfg, gc
    )
    s_ab_restored = restored.value

    drop_direct, drop_restored = compute_drops(s_a, s_ab, s_ab_restored)
    report = ContinualReport(
        task_a=task_a,
        task_b=task_b,
        s_a=s_a,
        s_ab=s_ab,
        s_ab_restored=s_ab_restored,
        drop_direct=drop_direct,
        drop_restored=drop_restored,
    )
    atomic_write_text(
        os.path.join(out_dir, f"continual_{task_a}__{task_b}.json"),
        json.dumps(report.to_dict(), sort_keys=True) + "\n",
    )
    return report


# ---------------------------------------------------------------------------
# synthesize / eval / report entry points
# ---------------------------------------------------------------------------


def cmd_synthesize(
    cfg: RunConfig, out_dir: str, fmt: str,
    gen_ckpt: str | None = None, filter_ckpt: str | None = None,
):
    if fmt not in FORMAT_CODES.values():
        raise ConfigError(f"unknown format {fmt!r}")
    for given in (gen_ckpt, filter_ckpt):
        if given is not None and not os.path.exists(given):
            raise ConfigError(f"checkpoint {given!r} does not exist")
    vocab = ensure_vocab(out_dir)
    return synthesize_format(cfg, fmt, vocab, out_dir, gen_ckpt=gen_ckpt, filter_ckpt=filter_ckpt)


def cmd_eval(cfg: RunConfig, out_dir: str, task: str, ckpt_path: str, bank_path: str) -> EvalReport:
    vocab = ensure_vocab(out_dir)
    params = load_checkpoint(ckpt_path)
    bank = PromptBank.load(bank_path)
    spec = resolve_task(task)
    _, dev_split = task_corpora(spec, cfg)
    report = evaluate_instances(
        params, bank, dev_split, vocab, PromptConfig(m=cfg.prompt_len), cfg.generation_config()
    )
    report.write_csv(os.path.join(out_dir, f"eval_{task}.csv"))
    return report


def cmd_report(input_paths: list[str], out_dir: str) -> dict[str, str]:
    """Aggregate eval CSVs, continual JSONs, and curve CSVs into summaries."""
    missing = [p for p in input_paths if not os.path.exists(p)]
    if missing or not input_paths:
        raise ConfigError(f"missing report inputs: {missing or 'none given'}")
    summary_rows = []
    continual_rows = []
    curve_rows = []
    for path in sorted(input_paths):
        base = os.path.basename(path)
        if path.endswith(".json"):
            with open(path, encoding="utf-8") as fh:
                d = json.load(fh)
            continual_rows.append(
                [d["task_a"], d["task_b"], d["s_a"], d["s_ab"], d["s_ab_restored"],
                 d["drop_direct_pct"], d["drop_restored_pct"]]
            )
        elif path.endswith(".curve.csv"):
            with open(path, encoding="utf-8", newline="") as fh:
                for row in list(csv.reader(fh))[1:]:
                    curve_rows.append([base, row[0], row[1]])
        elif path.endswith(".csv"):
            with open(path, encoding="utf-8", newline="") as fh:
                rows = list(csv.reader(fh))
            tail = rows[-1]
            if tail and tail[0] == "__summary__":
                summary_rows.append([base, tail[1], tail[2], tail[4]])
        else:
            raise ConfigError(f"cannot classify report input {path!r}")

    outputs = {}

    def write(name, header, rows):
        text = ",".join(header) + "\n" + "".join(
            ",".join(str(c) for c in row) + "\n" for row in rows
        )
        path = os.path.join(out_dir, name)
        atomic_write_text(path, text)
        outputs[name] = path

    write("summary.csv", ["source", "metric", "value", "n_examples"], summary_rows)
    if continual_rows:
        write(
            "continual.csv",
            ["task_a", "task_b", "s_a", "s_ab", "s_ab_restored",
             "drop_direct_pct", "drop_restored_pct"],
            continual_rows,
        )
    if curve_rows:
        write("curves.csv", ["source", "step", "metric"], curve_rows)
    return outputs
