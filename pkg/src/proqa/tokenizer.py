"""Word-level tokenizer with reserved id ranges.

Id layout, in order: 4 control tokens (PAD=0, EOS, SEP, UNK), then key
indicators, then registered hard-prompt tokens, then 26 option letters,
then regular words in first-seen corpus order. Everything is lowercase
and whitespace-delimited, which keeps decode(encode(x)) exact on
in-vocab text and doubles as the normalization used for exact match.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError, VocabError

PAD, EOS, SEP, UNK = 0, 1, 2, 3
CONTROL_TOKENS = ["<pad>", "</s>", "[sep]", "<unk>"]

KEY_NAMES = ["domain", "format", "task", "question", "passage", "options"]
KEY_INDICATOR_TOKENS = [f"[{k}]" for k in KEY_NAMES]

OPTION_LETTER_TOKENS = [f"<{c}>" for c in "abcdefghijklmnopqrstuvwxyz"]


@dataclass(frozen=True)
class ReservedRanges:
    """Half-open [start, stop) id ranges for each reserved block."""

    control: tuple[int, int]
    key_indicators: tuple[int, int]
    hard_prompts: tuple[int, int]
    option_letters: tuple[int, int]


class Vocab:
    """Immutable token/id bijection with named reserved ranges."""

    def __init__(self, id_to_token: list[str], n_hard: int):
        self.id_to_token = list(id_to_token)
        self.token_to_id = {tok: i for i, tok in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ConfigError("duplicate token in vocabulary")
        k = len(KEY_INDICATOR_TOKENS)
        self.reserved = ReservedRanges(
            control=(0, 4),
            key_indicators=(4, 4 + k),
            hard_prompts=(4 + k, 4 + k + n_hard),
            option_letters=(4 + k + n_hard, 4 + k + n_hard + 26),
        )

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def id_of(self, token: str) -> int:
        try:
            return self.token_to_id[token]
        except KeyError:
            raise VocabError(f"token {token!r} is not registered") from None

    def key_indicator_id(self, key_name: str) -> int:
        return self.id_of(f"[{key_name}]")

    def option_letter_id(self, index: int) -> int:
        start, stop = self.reserved.option_letters
        if not 0 <= index < stop - start:
            raise VocabError(f"option index {index} exceeds the letter range")
        return start + index


def build_vocab(corpus, specials: list[str]) -> Vocab:
    """Assign ids to reserved tokens then corpus words in first-seen order.

    ``specials`` are the hard-prompt token surfaces; duplicates (or a
    collision with any reserved token) are a configuration error.
    """
    seen_specials = set()
    for name in specials:
        if name in seen_specials:
            raise ConfigError(f"duplicate special name {name!r}")
        seen_specials.add(name)
    id_to_token = CONTROL_TOKENS + KEY_INDICATOR_TOKENS + list(specials) + OPTION_LETTER_TOKENS
    reserved = set(id_to_token)
    if len(reserved) != len(id_to_token):
        raise ConfigError("special name collides with a reserved token")
    empty = True
    for line in corpus:
        empty = False
        for word in line.lower().split():
            if word not in reserved:
                id_to_token.append(word)
                reserved.add(word)
    if empty:
        raise ConfigError("cannot build a vocabulary from an empty corpus")
    return Vocab(id_to_token, n_hard=len(specials))


def encode(vocab: Vocab, text: str) -> list[int]:
    """Lowercase, whitespace-split, map unknown words to UNK."""
    return [vocab.token_to_id.get(word, UNK) for word in text.lower().split()]


def decode(vocab: Vocab, ids) -> str:
    """Join with single spaces, dropping PAD and EOS (SEP is kept)."""
    words = []
    for i in ids:
        i = int(i)
        if not 0 <= i < vocab.size:
            raise VocabError(f"id {i} outside vocabulary of size {vocab.size}")
        if i in (PAD, EOS):
            continue
        words.append(vocab.id_to_token[i])
    return " ".join(words)


def save_vocab(vocab: Vocab, path) -> None:
    n_keys = vocab.reserved.key_indicators[1] - vocab.reserved.key_indicators[0]
    n_hard = vocab.reserved.hard_prompts[1] - vocab.reserved.hard_prompts[0]
    header = f"#reserved control=4 keys={n_keys} hard={n_hard} options=26\n"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header)
        for token in vocab.id_to_token:
            fh.write(token + "\n")


def load_vocab(path) -> Vocab:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        if not header.startswith("#reserved "):
            raise VocabError(f"missing #reserved header in {path}")
        fields = dict(part.split("=") for part in header.split()[1:])
        tokens = [line.rstrip("\n") for line in fh]
    return Vocab(tokens, n_hard=int(fields["hard"]))
