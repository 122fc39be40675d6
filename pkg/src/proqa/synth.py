"""Generation-filtering pipeline for the synthetic pre-training corpus.

A trained question generator turns a passage into "q [sep] a"; a
separately trained answering model scores each pair by the mean
cross-entropy of the answer given passage and question (lower means
more consistent); a ranking filter keeps the best slice. Multichoice
pairs additionally get three distractors, and yes/no questions come
straight from the world facts with balanced labels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigError,
    DegeneratePairError,
    DistractorExhaustionError,
    MalformedGenerationError,
    PipelineOrderError,
)
from .model import GenerationConfig, ModelParams, generate, sequence_token_losses
from .schema import CompiledInput
from .tokenizer import EOS, Vocab, decode, encode

SEP_WORD = "[sep]"


@dataclass
class Passage:
    id: str
    text: str
    source_world: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.text.strip():
            raise DegeneratePairError(f"passage {self.id!r} has empty text")


@dataclass
class GeneratedPair:
    passage_id: str
    question: str
    answer: str
    format: str
    options: list[str] | None = None
    correct_index: int | None = None
    score: float | None = None


@dataclass
class SynthConfig:
    """Either keep the best ``keep_ratio`` slice or everything under ``threshold``."""

    keep_ratio: float | None = 0.5
    threshold: float | None = None
    n_distractors: int = 3
    max_pairs_per_passage: int = 1
    seed: int = 0

    def __post_init__(self):
        if (self.keep_ratio is None) == (self.threshold is None):
            raise ConfigError("set exactly one of keep_ratio / threshold")
        if self.keep_ratio is not None and not 0.0 < self.keep_ratio <= 1.0:
            raise ConfigError(f"keep_ratio must be in (0, 1], got {self.keep_ratio}")


class Seq2SeqText:
    """Plain text-to-text view of the model (no prompt slots)."""

    def __init__(self, params: ModelParams, vocab: Vocab, gc: GenerationConfig | None = None):
        self.params = params
        self.vocab = vocab
        self.gc = gc or GenerationConfig(max_new_tokens=24)

    def _compiled(self, source: str) -> CompiledInput:
        return CompiledInput(ids=encode(self.vocab, source), soft_slots=[])

    def generate_text(self, source: str, gc: GenerationConfig | None = None) -> str:
        result = generate(self._compiled(source), self.params, None, gc or self.gc)
        return decode(self.vocab, result.ids)

    def token_losses(self, source: str, target: str) -> np.ndarray:
        target_ids = encode(self.vocab, target)
        return sequence_token_losses(self._compiled(source), target_ids, self.params, None)

    def training_item(self, source: str, target: str) -> tuple[CompiledInput, list[int]]:
        return self._compiled(source), encode(self.vocab, target) + [EOS]


def generate_qa(gen_model, passage: Passage, gc: GenerationConfig, format: str = "extractive") -> GeneratedPair:
    """Decode one sequence and split it at the first separator token."""
    text = gen_model.generate_text(passage.text, gc)
    words = text.split()
    if SEP_WORD not in words:
        raise MalformedGenerationError(
            f"no separator in generation for passage {passage.id!r}: {text!r}"
        )
    cut = words.index(SEP_WORD)
    question = " ".join(words[:cut]).strip()
    answer = " ".join(words[cut + 1:]).strip()
    if not question or not answer:
        raise MalformedGenerationError(
            f"empty question or answer for passage {passage.id!r}: {text!r}"
        )
    return GeneratedPair(passage_id=passage.id, question=question, answer=answer, format=format)


def score_pair(filter_model, passage: Passage, question: str, answer: str) -> float:
    """Mean per-token cross-entropy of the answer given passage and question."""
    if not answer.strip():
        raise DegeneratePairError(f"empty answer for passage {passage.id!r}")
    losses = filter_model.token_losses(f"{passage.text} {SEP_WORD} {question}", answer)
    return float(losses.mean())


def filter_pairs(pairs: list[GeneratedPair], cfg: SynthConfig) -> list[GeneratedPair]:
    """Sort ascending by score and keep the configured slice.

    Ties break on (passage_id, question) so the result is stable.
    """
    for pair in pairs:
        if pair.score is None:
            raise PipelineOrderError(
                f"pair for passage {pair.passage_id!r} reached the filter unscored"
            )
    ranked = sorted(pairs, key=lambda p: (p.score, p.passage_id, p.question))
    if cfg.keep_ratio is not None:
        return ranked[: math.ceil(cfg.keep_ratio * len(ranked))]
    return [p for p in ranked if p.score <= cfg.threshold]


@dataclass
class PoolDistractorSampler:
    """Proposes wrong options drawn from a fixed candidate pool."""

    candidates: list[str]

    def propose(self, passage: Passage, question: str, answer: str, rng) -> list[str]:
        order = rng.permutation(len(self.candidates))
        return [self.candidates[int(i)] for i in order]


def gen_distractors(
    neg_model, passage: Passage, question: str, answer: str, seed: int, n_distractors: int = 3,
    max_retries: int = 4,
) -> tuple[list[str], list[str], int]:
    """3 distinct wrong options, then a seeded shuffle of [answer] + options.

    Returns (distractors, shuffled option list, index of the answer).
    """
    rng = np.random.default_rng([seed, 57331])
    gold = answer.strip().lower()
    distractors: list[str] = []
    for _ in range(max_retries):
        for cand in neg_model.propose(passage, question, answer, rng):
            norm = cand.strip().lower()
            if norm == gold or any(norm == d.strip().lower() for d in distractors):
                continue
            distractors.append(cand)
            if len(distractors) == n_distractors:
                break
        if len(distractors) == n_distractors:
            break
    if len(distractors) < n_distractors:
        raise DistractorExhaustionError(
            f"only {len(distractors)} distinct distractors for passage {passage.id!r}"
        )
    options = [answer] + distractors
    perm = rng.permutation(len(options))
    options = [options[int(i)] for i in perm]
    return distractors, options, options.index(answer)


def make_yesno(passage: Passage, world, seed: int) -> tuple[str, str] | None:
    """One true-or-false question about a fact behind the passage.

    The label comes from the seed's parity, so sequential seeds give an
    exactly balanced batch. Returns None when the single possible object
    value leaves nothing to corrupt.
    """
    facts = passage.source_world.get("facts")
    if not facts:
        raise DegeneratePairError(f"passage {passage.id!r} carries no source facts")
    rng = np.random.default_rng([seed, 77813])
    person, relation, obj = facts[int(rng.integers(len(facts)))]
    want_true = seed % 2 == 0
    if want_true:
        return world.yesno_question(person, relation, obj), "true"
    pool = [o for o in world.objects_for_relation(relation) if o != obj]
    if not pool:
        return None
    corrupted = pool[int(rng.integers(len(pool)))]
    return world.yesno_question(person, relation, corrupted), "false"
