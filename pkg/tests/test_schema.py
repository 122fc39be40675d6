import json

import pytest

from proqa.errors import SchemaError, VocabError
from proqa.schema import (
    CompiledInput,
    PromptConfig,
    QAInstance,
    compile_instance,
    hard_prompt_token,
    layout_length,
    parse_instance,
    serialize_instance,
)
from proqa.tokenizer import PAD, build_vocab


def make_vocab(extra_specials=(), corpus=("what does alice like . alice likes tea paris london rome",)):
    specials = [
        hard_prompt_token("domain", "toyworld"),
        hard_prompt_token("format", "extractive"),
        hard_prompt_token("format", "multichoice"),
        hard_prompt_token("task", "squad"),
        hard_prompt_token("task", "race"),
        *extra_specials,
    ]
    return build_vocab(list(corpus), specials=specials)


def extractive_inst(**overrides):
    base = dict(
        id="x1",
        format="extractive",
        task="squad",
        domain="toyworld",
        question="what does alice like",
        passage="alice likes tea",
        answer="tea",
    )
    base.update(overrides)
    return QAInstance(**base)


class TestParse:
    def test_minimal_extractive(self):
        line = json.dumps(
            {"id": "a", "format": "extractive", "task": "t", "domain": "d", "question": "q"}
        )
        inst = parse_instance(line)
        assert inst.options is None and inst.passage is None

    def test_multichoice_order_preserved(self):
        line = json.dumps(
            {
                "id": "a",
                "format": "multichoice",
                "task": "t",
                "domain": "d",
                "question": "q",
                "options": ["o1", "o2", "o3", "o4"],
            }
        )
        assert parse_instance(line).options == ["o1", "o2", "o3", "o4"]

    def test_unknown_format_rejected(self):
        line = json.dumps(
            {"id": "a", "format": "boolq-style", "task": "t", "domain": "d", "question": "q"}
        )
        with pytest.raises(SchemaError):
            parse_instance(line)

    def test_missing_question(self):
        line = json.dumps({"id": "a", "format": "extractive", "task": "t", "domain": "d"})
        with pytest.raises(SchemaError):
            parse_instance(line)

    def test_options_on_non_multichoice(self):
        line = json.dumps(
            {
                "id": "a",
                "format": "extractive",
                "task": "t",
                "domain": "d",
                "question": "q",
                "options": ["x", "y"],
            }
        )
        with pytest.raises(SchemaError):
            parse_instance(line)

    def test_too_few_options(self):
        with pytest.raises(SchemaError):
            QAInstance(
                id="a", format="multichoice", task="t", domain="d", question="q", options=["only"]
            )

    def test_round_trip_field_for_field(self):
        inst = extractive_inst()
        again = parse_instance(serialize_instance(inst))
        assert again == inst

    def test_extra_fields_ignored(self):
        line = serialize_instance(extractive_inst(), extra={"score": 0.25, "provenance": {}})
        assert parse_instance(line) == extractive_inst()


class TestCompile:
    def test_length_arithmetic(self):
        vocab = make_vocab()
        inst = extractive_inst(question="what alice like", passage="alice likes tea . paris")
        cfg = PromptConfig(m=2)
        out = compile_instance(inst, vocab, cfg)
        # 3 slots x 2 + 6 attribute tokens + (1 + 3) question + (1 + 5) passage
        assert out.length == 3 * 2 + 6 + (1 + 3) + (1 + 5) == 22
        assert layout_length(inst, cfg) == 22

    def test_zero_m_degenerate(self):
        vocab = make_vocab()
        out = compile_instance(extractive_inst(), vocab, PromptConfig(m=0))
        assert all(length == 0 for _, length, _ in out.soft_slots)
        assert out.ids[0] == vocab.key_indicator_id("domain")

    def test_attribute_hard_tokens_in_key_order(self):
        vocab = make_vocab()
        out = compile_instance(extractive_inst(), vocab, PromptConfig(m=1))
        ids = out.ids
        assert ids[3] == vocab.key_indicator_id("domain")
        assert ids[4] == vocab.id_of("<domain:toyworld>")
        assert ids[5] == vocab.key_indicator_id("format")
        assert ids[6] == vocab.id_of("<format:extractive>")
        assert ids[7] == vocab.key_indicator_id("task")
        assert ids[8] == vocab.id_of("<task:squad>")

    def test_slots_precede_content_and_name_banks(self):
        vocab = make_vocab()
        out = compile_instance(extractive_inst(), vocab, PromptConfig(m=3))
        assert out.soft_slots == [
            (0, 3, ("domain", "toyworld")),
            (3, 3, ("format", "extractive")),
            (6, 3, ("task", "squad")),
        ]
        assert out.ids[:9] == [PAD] * 9

    def test_unregistered_hard_prompt(self):
        vocab = make_vocab()
        inst = extractive_inst(task="never-registered")
        with pytest.raises(VocabError):
            compile_instance(inst, vocab, PromptConfig(m=1))

    def test_task_change_moves_one_token_only(self):
        vocab = make_vocab()
        cfg = PromptConfig(m=2)
        a = compile_instance(extractive_inst(task="squad"), vocab, cfg)
        b = compile_instance(extractive_inst(task="race"), vocab, cfg)
        assert a.length == b.length
        diffs = [i for i, (x, y) in enumerate(zip(a.ids, b.ids)) if x != y]
        assert diffs == [3 * cfg.m + 5]  # the task hard-prompt token
        slot_diffs = [i for i, (x, y) in enumerate(zip(a.soft_slots, b.soft_slots)) if x != y]
        assert slot_diffs == [2]

    def test_options_layout(self):
        vocab = make_vocab()
        inst = QAInstance(
            id="m1",
            format="multichoice",
            task="race",
            domain="toyworld",
            question="what does alice like",
            passage="alice likes tea",
            options=["tea", "paris", "london", "rome"],
            answer="tea",
        )
        cfg = PromptConfig(m=0)
        out = compile_instance(inst, vocab, cfg)
        opt_key = vocab.key_indicator_id("options")
        pos = out.ids.index(opt_key)
        assert out.ids[pos + 1] == vocab.option_letter_id(0)
        assert out.length == layout_length(inst, cfg)
        # one extra single-token option adds 2 ids
        inst5 = QAInstance(**{**inst.__dict__, "options": inst.options + ["oslo"]})
        assert layout_length(inst5, cfg) == layout_length(inst, cfg) + 2

    def test_each_key_indicator_appears_once(self):
        vocab = make_vocab()
        out = compile_instance(extractive_inst(), vocab, PromptConfig(m=2))
        for key in ("domain", "format", "task", "question", "passage"):
            assert out.ids.count(vocab.key_indicator_id(key)) == 1
        assert out.ids.count(vocab.key_indicator_id("options")) == 0

    def test_compile_deterministic(self):
        vocab = make_vocab()
        cfg = PromptConfig(m=4)
        a = compile_instance(extractive_inst(), vocab, cfg)
        b = compile_instance(extractive_inst(), vocab, cfg)
        assert a == b


class TestLayoutLength:
    def test_matches_compile_on_random_instances(self):
        import random

        rng = random.Random(7)
        words = ["alice", "likes", "tea", "paris", "london", "rome", "what", "does", "."]
        vocab = make_vocab(corpus=[" ".join(words)])
        cfg = PromptConfig(m=3)
        for i in range(1000):
            fmt = rng.choice(["extractive", "multichoice"])
            kwargs = dict(
                id=f"r{i}",
                format=fmt,
                task="squad" if fmt == "extractive" else "race",
                domain="toyworld",
                question=" ".join(rng.choices(words, k=rng.randint(1, 6))),
                passage=" ".join(rng.choices(words, k=rng.randint(1, 12))) if rng.random() < 0.8 else None,
            )
            if fmt == "multichoice":
                kwargs["options"] = [
                    " ".join(rng.choices(words, k=rng.randint(1, 3))) for _ in range(4)
                ]
            inst = QAInstance(**kwargs)
            assert layout_length(inst, cfg) == compile_instance(inst, vocab, cfg).length

    def test_monotone_in_passage(self):
        cfg = PromptConfig(m=1)
        short = extractive_inst(passage="alice likes tea")
        longer = extractive_inst(passage="alice likes tea and more words here")
        assert layout_length(longer, cfg) > layout_length(short, cfg)


def test_prompt_config_validation():
    with pytest.raises(SchemaError):
        PromptConfig(m=-1)
    with pytest.raises(SchemaError):
        PromptConfig(key_order=("domain", "format", "task"))
