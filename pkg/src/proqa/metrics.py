"""Answer metrics: exact match, token F1, ROUGE-L, option accuracy.

Normalization is lowercase + punctuation stripping + whitespace
collapsing. Exact match additionally drops the articles a/an/the;
the overlap metrics keep them so partial credit stays token-faithful.
"""

from __future__ import annotations

import csv
import string
from collections import Counter
from dataclasses import dataclass, field

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)
_ARTICLES = {"a", "an", "the"}


def normalize_tokens(text: str, drop_articles: bool = False) -> list[str]:
    words = text.lower().translate(_PUNCT_TABLE).split()
    if drop_articles:
        words = [w for w in words if w not in _ARTICLES]
    return words


def em(pred: str, gold: str) -> float:
    """1.0 iff the two strings match after full normalization."""
    return float(normalize_tokens(pred, drop_articles=True) == normalize_tokens(gold, drop_articles=True))


def token_f1(pred: str, gold: str) -> float:
    """Bag-of-tokens F1; both empty scores 1, exactly one empty scores 0."""
    p = normalize_tokens(pred)
    g = normalize_tokens(gold)
    if not p and not g:
        return 1.0
    if not p or not g:
        return 0.0
    common = sum((Counter(p) & Counter(g)).values())
    if common == 0:
        return 0.0
    precision = common / len(p)
    recall = common / len(g)
    return 2 * precision * recall / (precision + recall)


def _lcs_length(a: list[str], b: list[str]) -> int:
    """Classic O(len(a) * len(b)) longest-common-subsequence table."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            if x == y:
                cur.append(prev[j - 1] + 1)
            else:
                cur.append(max(prev[j], cur[-1]))
        prev = cur
    return prev[-1]


def rouge_l(pred: str, gold: str) -> float:
    """LCS F-measure with equal precision/recall weighting."""
    p = normalize_tokens(pred)
    g = normalize_tokens(gold)
    if not p and not g:
        return 1.0
    if not p or not g:
        return 0.0
    lcs = _lcs_length(p, g)
    if lcs == 0:
        return 0.0
    precision = lcs / len(p)
    recall = lcs / len(g)
    return 2 * precision * recall / (precision + recall)


def mc_accuracy(generated: str, options: list[str], gold_index: int) -> float:
    """Pick the option most token-F1-similar to the generation; ties go low."""
    if len(options) < 2:
        raise ValueError(f"need >= 2 options, got {len(options)}")
    scores = [token_f1(generated, option) for option in options]
    best = max(range(len(options)), key=lambda i: (scores[i], -i))
    return float(best == gold_index)


_TRUE_WORDS = {"true", "yes"}
_FALSE_WORDS = {"false", "no"}


def yesno_accuracy(generated: str, gold: str) -> float:
    """Strict: anything that is not a recognizable yes/no counts as wrong."""
    words = normalize_tokens(generated)
    pred = None
    if len(words) == 1:
        if words[0] in _TRUE_WORDS:
            pred = "true"
        elif words[0] in _FALSE_WORDS:
            pred = "false"
    gold_label = "true" if normalize_tokens(gold) and normalize_tokens(gold)[0] in _TRUE_WORDS else "false"
    return float(pred == gold_label)


@dataclass
class EvalReport:
    """Mean of per-example scores plus the breakdown behind it."""

    metric: str
    value: float
    n_examples: int
    rows: list[dict] = field(default_factory=list)

    @classmethod
    def from_rows(cls, metric: str, rows: list[dict]) -> "EvalReport":
        value = sum(r["score"] for r in rows) / len(rows) if rows else 0.0
        return cls(metric=metric, value=value, n_examples=len(rows), rows=rows)

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["example_id", "metric", "score", "prediction", "gold"])
            for row in self.rows:
                writer.writerow(
                    [row["example_id"], self.metric, f"{row['score']:.6f}",
                     row.get("prediction", ""), row.get("gold", "")]
                )
            writer.writerow(["__summary__", self.metric, f"{self.value:.6f}", "", str(self.n_examples)])
