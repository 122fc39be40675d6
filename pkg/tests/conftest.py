import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from proqa.prompt_bank import PromptBank
from proqa.schema import PromptConfig, QAInstance, compile_instance, hard_prompt_token
from proqa.tokenizer import build_vocab
from proqa.toyworld import world_vocabulary


@pytest.fixture(scope="session")
def toy_vocab():
    specials = [
        hard_prompt_token("domain", "toyworld"),
        hard_prompt_token("format", "extractive"),
        hard_prompt_token("format", "abstractive"),
        hard_prompt_token("format", "multichoice"),
        hard_prompt_token("format", "yesno"),
        hard_prompt_token("task", "tiny-a"),
        hard_prompt_token("task", "tiny-b"),
    ]
    return build_vocab([" ".join(world_vocabulary())], specials=specials)


@pytest.fixture
def tiny_setup(toy_vocab):
    """A d=16 bank, prompt config, and one compiled extractive instance."""
    cfg = PromptConfig(m=2)
    bank = PromptBank(m=2, d_model=16)
    bank.init_prompt("domain", "toyworld", random=(1, 0.02))
    bank.init_prompt("format", "extractive", random=(2, 0.02))
    bank.init_prompt("task", "tiny-a", random=(3, 0.02))
    bank.init_prompt("task", "tiny-b", random=(4, 0.02))
    inst = QAInstance(
        id="i0",
        format="extractive",
        task="tiny-a",
        domain="toyworld",
        question="what does alice like",
        passage="alice likes tea",
        answer="tea",
    )
    ci = compile_instance(inst, toy_vocab, cfg)
    return toy_vocab, cfg, bank, inst, ci
