"""Structured QA instances and the prompt-layout compiler.

An instance is compiled into one flat token-id sequence: first the
reserved soft-prompt slots for domain/format/task, then one segment per
key, each opened by its key-indicator token. Attribute keys carry a
single hard-prompt token as their value; content keys carry text.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import SchemaError, VocabError
from .tokenizer import PAD, Vocab, encode

FORMATS = ("extractive", "abstractive", "multichoice", "yesno")

ATTRIBUTE_KEYS = ("domain", "format", "task")
DEFAULT_KEY_ORDER = ("domain", "format", "task", "question", "passage", "options")


@dataclass
class QAInstance:
    id: str
    format: str
    task: str
    domain: str
    question: str
    passage: str | None = None
    options: list[str] | None = None
    answer: str | None = None

    def __post_init__(self):
        if self.format not in FORMATS:
            raise SchemaError(f"unknown format {self.format!r} for instance {self.id!r}")
        if not self.question:
            raise SchemaError(f"instance {self.id!r} has no question")
        if self.options is not None and self.format != "multichoice":
            raise SchemaError(f"options given on non-multichoice instance {self.id!r}")
        if self.format == "multichoice":
            if self.options is None or len(self.options) < 2:
                raise SchemaError(f"multichoice instance {self.id!r} needs >= 2 options")


def parse_instance(record: str) -> QAInstance:
    """Parse one JSONL line into a validated QAInstance."""
    try:
        raw = json.loads(record)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise SchemaError("record is not a JSON object")
    missing = [k for k in ("id", "format", "task", "domain", "question") if k not in raw]
    if missing:
        raise SchemaError(f"record missing fields {missing}")
    return QAInstance(
        id=str(raw["id"]),
        format=raw["format"],
        task=raw["task"],
        domain=raw["domain"],
        question=raw["question"],
        passage=raw.get("passage"),
        options=list(raw["options"]) if "options" in raw else None,
        answer=raw.get("answer"),
    )


def serialize_instance(inst: QAInstance, extra: dict | None = None) -> str:
    """One JSON line; absent optional fields are omitted, not null."""
    obj = {
        "id": inst.id,
        "format": inst.format,
        "task": inst.task,
        "domain": inst.domain,
        "question": inst.question,
    }
    if inst.passage is not None:
        obj["passage"] = inst.passage
    if inst.options is not None:
        obj["options"] = inst.options
    if inst.answer is not None:
        obj["answer"] = inst.answer
    if extra:
        obj.update(extra)
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def hard_prompt_token(kind: str, value: str) -> str:
    """Canonical single-token surface for an attribute value."""
    return f"<{kind}:{value}>"


@dataclass
class PromptConfig:
    """Soft-prompt length and key layout used by the compiler.

    ``hard_prompt_names`` overrides the canonical ``<kind:value>`` token
    for individual attribute values.
    """

    m: int = 8
    key_order: tuple[str, ...] = DEFAULT_KEY_ORDER
    hard_prompt_names: dict[tuple[str, str], str] = field(default_factory=dict)

    def __post_init__(self):
        if self.m < 0:
            raise SchemaError(f"soft-prompt length must be >= 0, got {self.m}")
        if "question" not in self.key_order:
            raise SchemaError("key_order must contain 'question'")
        unknown = set(self.key_order) - set(DEFAULT_KEY_ORDER)
        if unknown:
            raise SchemaError(f"unknown keys in key_order: {sorted(unknown)}")

    def hard_name(self, kind: str, value: str) -> str:
        return self.hard_prompt_names.get((kind, value), hard_prompt_token(kind, value))


@dataclass
class CompiledInput:
    """Token ids plus the slot layout for soft-prompt injection."""

    ids: list[int]
    soft_slots: list[tuple[int, int, tuple[str, str]]]

    @property
    def length(self) -> int:
        return len(self.ids)


def _attribute_value(inst: QAInstance, kind: str) -> str:
    return {"domain": inst.domain, "format": inst.format, "task": inst.task}[kind]


def compile_instance(inst: QAInstance, vocab: Vocab, cfg: PromptConfig) -> CompiledInput:
    """Lay out soft slots, then key segments, as one id sequence.

    Slot positions are filled with PAD placeholders; the embedding layer
    overwrites them with the bank matrices named by ``soft_slots``.
    """
    ids: list[int] = []
    soft_slots = []
    for kind in ATTRIBUTE_KEYS:
        soft_slots.append((len(ids), cfg.m, (kind, _attribute_value(inst, kind))))
        ids.extend([PAD] * cfg.m)

    for key in cfg.key_order:
        if key in ATTRIBUTE_KEYS:
            value = _attribute_value(inst, key)
            name = cfg.hard_name(key, value)
            if name not in vocab.token_to_id:
                raise VocabError(f"hard prompt {name!r} is not registered in the vocabulary")
            ids.append(vocab.key_indicator_id(key))
            ids.append(vocab.id_of(name))
        elif key == "question":
            ids.append(vocab.key_indicator_id("question"))
            ids.extend(encode(vocab, inst.question))
        elif key == "passage":
            if inst.passage is not None:
                ids.append(vocab.key_indicator_id("passage"))
                ids.extend(encode(vocab, inst.passage))
        elif key == "options":
            if inst.format == "multichoice":
                ids.append(vocab.key_indicator_id("options"))
                for i, option in enumerate(inst.options):
                    ids.append(vocab.option_letter_id(i))
                    ids.extend(encode(vocab, option))
    return CompiledInput(ids=ids, soft_slots=soft_slots)


def layout_length(inst: QAInstance, cfg: PromptConfig) -> int:
    """Length compile_instance would produce, without touching a vocabulary."""
    n = 3 * cfg.m
    for key in cfg.key_order:
        if key in ATTRIBUTE_KEYS:
            n += 2
        elif key == "question":
            n += 1 + len(inst.question.split())
        elif key == "passage":
            if inst.passage is not None:
                n += 1 + len(inst.passage.split())
        elif key == "options":
            if inst.format == "multichoice":
                n += 1 + sum(1 + len(o.split()) for o in inst.options)
    return n
