"""Seeded toy worlds that stand in for real QA datasets.

A world assigns one object per (person, relation) pair; passages
verbalize a handful of facts and questions target exactly one of them,
so every task is fully solvable from its passage. Worlds with different
seeds share vocabulary but disagree on the facts, which is what makes
task pairs genuinely different for adaptation experiments.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError
from .schema import QAInstance
from .synth import Passage, make_yesno

PEOPLE = [
    "alice", "bob", "carol", "dave", "erin", "frank", "grace", "henry",
    "iris", "jack", "kate", "liam", "mona", "nick", "olive", "peter",
    "quinn", "rosa", "sam", "tina",
]


@dataclass(frozen=True)
class Relation:
    verb: str
    question: str
    say_question: str
    rephrase: str
    yesno: str
    objects: tuple[str, ...]


RELATIONS = {
    "likes": Relation(
        verb="likes",
        question="what does {p} like",
        say_question="say what {p} likes",
        rephrase="{p} is fond of {o}",
        yesno="does {p} like {o}",
        objects=(
            "tea", "coffee", "bread", "apples", "rice",
            "soup", "cake", "honey", "green plums", "corn",
        ),
    ),
    "lives_in": Relation(
        verb="lives in",
        question="where does {p} live",
        say_question="say where {p} lives",
        rephrase="{p} calls {o} home",
        yesno="does {p} live in {o}",
        objects=(
            "paris", "london", "oslo", "cairo", "lima",
            "rome", "tokyo", "delhi", "new quito", "sofia",
        ),
    ),
    "plays": Relation(
        verb="plays",
        question="what does {p} play",
        say_question="say what {p} plays",
        rephrase="{p} enjoys {o}",
        yesno="does {p} play {o}",
        objects=(
            "chess", "tennis", "violin", "drums", "soccer",
            "golf", "flute", "cards", "ice hockey", "piano",
        ),
    ),
}

RELATION_NAMES = tuple(RELATIONS)
FORMAT_INDEX = {"extractive": 0, "abstractive": 1, "multichoice": 2, "yesno": 3}


def world_vocabulary() -> list[str]:
    """Every surface word any world can emit, in a fixed order."""
    words: list[str] = []
    seen = set()

    def take(text: str):
        for w in text.lower().split():
            if w not in seen:
                seen.add(w)
                words.append(w)

    for p in PEOPLE:
        take(p)
    for rel in RELATIONS.values():
        take(rel.verb)
        for o in rel.objects:
            take(o)
        take(rel.question.format(p="x"))
        take(rel.say_question.format(p="x"))
        take(rel.rephrase.format(p="x", o="y"))
        take(rel.yesno.format(p="x", o="y"))
    take(". true false")
    return words


def verbalize_fact(person: str, relation: str, obj: str) -> str:
    return f"{person} {RELATIONS[relation].verb} {obj}"


@dataclass
class ToyWorld:
    """A deterministic fact table: one object per (person, relation)."""

    name: str
    seed: int
    domain: str = "toyworld"
    n_people: int = 20
    facts: list[tuple[str, str, str]] = field(init=False)

    def __post_init__(self):
        rng = np.random.default_rng([self.seed, 991])
        people = PEOPLE[: self.n_people]
        self.facts = []
        for person in people:
            for rel_name in RELATION_NAMES:
                pool = RELATIONS[rel_name].objects
                self.facts.append((person, rel_name, pool[int(rng.integers(len(pool)))]))

    @property
    def capacity(self) -> int:
        return len(self.facts)

    def objects_for_relation(self, relation: str) -> tuple[str, ...]:
        return RELATIONS[relation].objects

    def yesno_question(self, person: str, relation: str, obj: str) -> str:
        return RELATIONS[relation].yesno.format(p=person, o=obj)

    def passage_text(self, facts: list[tuple[str, str, str]]) -> str:
        return " . ".join(verbalize_fact(*f) for f in facts)

    def make_passages(self, n: int, seed: int, facts_per_passage: int = 3) -> list[Passage]:
        """Unlabeled passages for corpus synthesis.

        Unlike task instances, passages are free combinations of facts,
        so any n is fine; the target-fact rotation just spreads coverage.
        """
        if facts_per_passage > self.capacity:
            raise CapacityError(
                f"{facts_per_passage} facts per passage from a world with {self.capacity}"
            )
        rng = np.random.default_rng([seed, self.seed, 7])
        order = rng.permutation(self.capacity)
        passages = []
        for k in range(n):
            target = int(order[k % self.capacity])
            fact_ids = self._context_fact_ids(target, facts_per_passage, rng)
            facts = [self.facts[i] for i in fact_ids]
            passages.append(
                Passage(
                    id=f"{self.name}-p{k:05d}",
                    text=self.passage_text(facts),
                    source_world={"world": self.name, "facts": [list(f) for f in facts]},
                )
            )
        return passages

    def _context_fact_ids(self, target_id: int, count: int, rng) -> list[int]:
        others = [i for i in range(self.capacity) if i != target_id]
        picks = rng.choice(len(others), size=count - 1, replace=False)
        ids = [target_id] + [others[int(i)] for i in picks]
        rng.shuffle(ids)
        return ids


def gen_toy_corpus(format: str, world: ToyWorld, n: int, split_seed: int) -> list[QAInstance]:
    """n instances of one format; every answer is derivable from its passage."""
    if n < 1:
        raise CapacityError("need n >= 1")
    if n > world.capacity:
        raise CapacityError(
            f"{n} instances exceed capacity {world.capacity} of world {world.name!r}"
        )
    fmt_idx = FORMAT_INDEX[format]
    rng = np.random.default_rng([split_seed, world.seed, fmt_idx, 13])
    order = rng.permutation(world.capacity)

    instances = []
    skipped = 0
    for k in range(n):
        target_id = int(order[(k + skipped) % world.capacity])
        person, rel_name, obj = world.facts[target_id]
        rel = RELATIONS[rel_name]
        fact_ids = world._context_fact_ids(target_id, 3, rng)
        facts = [world.facts[i] for i in fact_ids]
        passage = world.passage_text(facts)
        inst_id = f"{world.name}-{format}-{k:05d}"
        common = dict(id=inst_id, task=world.name, domain=world.domain, passage=passage)

        if format == "extractive":
            inst = QAInstance(
                format="extractive", question=rel.question.format(p=person), answer=obj, **common
            )
        elif format == "abstractive":
            inst = QAInstance(
                format="abstractive",
                question=rel.say_question.format(p=person),
                answer=rel.rephrase.format(p=person, o=obj),
                **common,
            )
        elif format == "multichoice":
            pool = [o for o in rel.objects if o != obj]
            picks = rng.choice(len(pool), size=3, replace=False)
            options = [obj] + [pool[int(i)] for i in picks]
            perm = rng.permutation(4)
            options = [options[int(i)] for i in perm]
            inst = QAInstance(
                format="multichoice",
                question=rel.question.format(p=person),
                options=options,
                answer=obj,
                **common,
            )
        elif format == "yesno":
            pseudo = Passage(
                id=inst_id, text=passage, source_world={"world": world.name, "facts": [list(f) for f in facts]}
            )
            made = make_yesno(pseudo, world, seed=int(split_seed * 100003 + k))
            if made is None:
                skipped += 1
                continue
            question, answer = made
            inst = QAInstance(format="yesno", question=question, answer=answer, **common)
        else:
            raise CapacityError(f"unknown format {format!r}")
        instances.append(inst)
    return instances


def train_dev_split(instances: list[QAInstance], n_dev: int) -> tuple[list[QAInstance], list[QAInstance]]:
    if n_dev >= len(instances):
        raise CapacityError(f"cannot hold out {n_dev} of {len(instances)} instances")
    return instances[:-n_dev], instances[-n_dev:]
