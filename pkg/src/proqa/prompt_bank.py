"""Persistent store of named soft-prompt matrices.

Entries are keyed (kind, name) with kind one of domain/format/task and
all share one (m, d_model). Each entry remembers where it came from and
how many steps have trained it; ``created_at`` is a per-bank creation
ordinal rather than wall-clock time so that reruns are byte-identical.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConflictError, FileFormatError, ResolutionError, ShapeError
from .fileio import atomic_write_bytes
from .tensor import DTensor

KINDS = ("domain", "format", "task")

BANK_MAGIC = b"PQBK"
BANK_VERSION = 1


@dataclass
class EntryMeta:
    initialized_from: str
    train_steps: int
    created_at: int
    version: int

    def to_dict(self) -> dict:
        return {
            "initialized_from": self.initialized_from,
            "train_steps": self.train_steps,
            "created_at": self.created_at,
            "version": self.version,
        }


class PromptBank:
    def __init__(self, m: int, d_model: int):
        if m < 1 or d_model < 1:
            raise ShapeError(f"bank needs m >= 1 and d_model >= 1, got {m}, {d_model}")
        self.m = m
        self.d_model = d_model
        self.entries: dict[tuple[str, str], np.ndarray] = {}
        self.meta: dict[tuple[str, str], EntryMeta] = {}
        self._counter = 0
        self._leaves: dict[tuple[str, str], DTensor] = {}

    def _check_key(self, kind: str, name: str) -> tuple[str, str]:
        if kind not in KINDS:
            raise ResolutionError(f"unknown prompt kind {kind!r}")
        return (kind, name)

    def has(self, kind: str, name: str) -> bool:
        return (kind, name) in self.entries

    def get(self, kind: str, name: str) -> np.ndarray:
        key = self._check_key(kind, name)
        try:
            return self.entries[key]
        except KeyError:
            raise ResolutionError(f"no prompt entry for {key}") from None

    def init_prompt(
        self,
        kind: str,
        name: str,
        *,
        copy_of: tuple[str, str] | None = None,
        random: tuple[int, float] | None = None,
    ) -> None:
        """Create an entry by copying another or by seeded Gaussian draw."""
        key = self._check_key(kind, name)
        if key in self.entries:
            raise ConflictError(f"prompt entry {key} already exists")
        if (copy_of is None) == (random is None):
            raise ResolutionError("init_prompt needs exactly one of copy_of / random")
        if copy_of is not None:
            source = self.get(*copy_of)
            matrix = source.copy()
            origin = f"copy_of:{copy_of[0]}:{copy_of[1]}"
        else:
            seed, spread = random
            rng = np.random.default_rng([int(seed), 40961])
            matrix = rng.normal(0.0, spread, size=(self.m, self.d_model))
            origin = f"random:seed={int(seed)},scale={spread}"
        self.entries[key] = matrix
        self._counter += 1
        self.meta[key] = EntryMeta(
            initialized_from=origin, train_steps=0, created_at=self._counter, version=1
        )

    def resolve_for_zero_shot(self, task_name: str, format_name: str) -> np.ndarray:
        """Task entry when present, else the format-level task prompt."""
        if self.has("task", task_name):
            return self.entries[("task", task_name)]
        if self.has("task", format_name):
            return self.entries[("task", format_name)]
        raise ResolutionError(
            f"no task prompt for {task_name!r} and no format-level prompt for {format_name!r}"
        )

    def swap(self, kind: str, name: str, matrix: np.ndarray) -> np.ndarray:
        """Replace an existing entry, returning the previous matrix."""
        key = self._check_key(kind, name)
        if key not in self.entries:
            raise ResolutionError(f"cannot swap missing entry {key}")
        matrix = np.ascontiguousarray(matrix, dtype=np.float64)
        if matrix.shape != (self.m, self.d_model):
            raise ShapeError(
                f"swap matrix shape {matrix.shape} != bank shape {(self.m, self.d_model)}"
            )
        previous = self.entries[key]
        self.entries[key] = matrix.copy()
        self.meta[key].version += 1
        self._leaves.pop(key, None)
        return previous

    def leaf(self, kind: str, name: str) -> DTensor:
        """A trainable view sharing memory with the stored entry."""
        key = self._check_key(kind, name)
        if key not in self._leaves:
            matrix = self.get(kind, name)
            self._leaves[key] = DTensor(matrix, requires_grad=True)
        return self._leaves[key]

    def note_train_steps(self, kind: str, name: str, steps: int) -> None:
        self.meta[(kind, name)].train_steps += steps

    def sorted_keys(self) -> list[tuple[str, str]]:
        return sorted(self.entries)

    # -- persistence --------------------------------------------------------

    def save(self, path) -> None:
        manifest = {
            "m": self.m,
            "d_model": self.d_model,
            "counter": self._counter,
            "entries": [
                {"kind": kind, "name": name, "meta": self.meta[(kind, name)].to_dict()}
                for kind, name in self.sorted_keys()
            ],
        }
        blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
        chunks = [BANK_MAGIC, struct.pack("<I", BANK_VERSION), struct.pack("<I", len(blob)), blob]
        for key in self.sorted_keys():
            chunks.append(self.entries[key].astype("<f8").tobytes())
        atomic_write_bytes(path, b"".join(chunks))

    @classmethod
    def load(cls, path) -> "PromptBank":
        with open(path, "rb") as fh:
            blob = fh.read()
        view = memoryview(blob)
        pos = 0

        def take(n: int) -> memoryview:
            nonlocal pos
            if pos + n > len(view):
                raise FileFormatError(f"truncated prompt bank {path}")
            out = view[pos:pos + n]
            pos += n
            return out

        if bytes(take(4)) != BANK_MAGIC:
            raise FileFormatError(f"{path} is not a prompt bank")
        version = struct.unpack("<I", take(4))[0]
        if version != BANK_VERSION:
            raise FileFormatError(f"bank version {version} != supported {BANK_VERSION}")
        manifest = json.loads(bytes(take(struct.unpack("<I", take(4))[0])))
        bank = cls(m=manifest["m"], d_model=manifest["d_model"])
        block = 8 * bank.m * bank.d_model
        for entry in manifest["entries"]:
            key = (entry["kind"], entry["name"])
            data = np.frombuffer(take(block), dtype="<f8").reshape(bank.m, bank.d_model)
            bank.entries[key] = data.copy()
            bank.meta[key] = EntryMeta(**entry["meta"])
        if pos != len(view):
            raise FileFormatError(f"{path} has {len(view) - pos} trailing bytes")
        bank._counter = manifest["counter"]
        return bank

    def equals(self, other: "PromptBank") -> bool:
        if (self.m, self.d_model) != (other.m, other.d_model):
            return False
        if self.sorted_keys() != other.sorted_keys():
            return False
        return all(
            np.array_equal(self.entries[k], other.entries[k]) and self.meta[k] == other.meta[k]
            for k in self.sorted_keys()
        )
