"""Seeded mini-batch training loop shared by pre-training, adaptation,
and the seed generator/filter models."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelParams, forward_loss
from .prompt_bank import PromptBank
from .tensor import AdamState, Tape, adam_step, backward


@dataclass
class TrainSettings:
    lr: float
    batch_size: int
    steps: int
    seed: int
    grad_accum: int = 1
    weight_decay: float = 0.0
    prompt_lr: float | None = None


class _BatchSampler:
    """Epoch-permuted batches; exact reruns for a given seed."""

    def __init__(self, n: int, batch_size: int, seed: int):
        self.n = n
        self.batch_size = min(batch_size, n)
        self.rng = np.random.default_rng([seed, 8887])
        self.order: list[int] = []

    def next_batch(self) -> list[int]:
        while len(self.order) < self.batch_size:
            self.order.extend(int(i) for i in self.rng.permutation(self.n))
        picked, self.order = self.order[: self.batch_size], self.order[self.batch_size:]
        return picked


def train_model(
    params: ModelParams,
    bank: PromptBank | None,
    items: list,
    settings: TrainSettings,
    prompt_keys: tuple = (),
    step_hook=None,
) -> list[float]:
    """Adam-train on (CompiledInput, target-ids) items; returns step losses.

    ``prompt_keys`` lists the bank entries that receive optimizer updates;
    other bank entries stay frozen even though slots still inject them.
    ``step_hook(step)`` runs after each optimizer step (used for learning
    curves).
    """
    sampler = _BatchSampler(len(items), settings.batch_size, settings.seed)
    model_tensors = params.trainable()
    model_state = AdamState.for_params(
        model_tensors, lr=settings.lr, weight_decay=settings.weight_decay
    )
    leaves = [bank.leaf(*key) for key in prompt_keys]
    prompt_state = (
        AdamState.for_params(leaves, lr=settings.prompt_lr or settings.lr) if leaves else None
    )
    train_prompts = bank is not None and any(
        length > 0 for ci, _ in items for _, length, _ in ci.soft_slots
    )
    losses = []
    for step in range(settings.steps):
        params.zero_grads()
        if bank is not None:
            for leaf in bank._leaves.values():
                leaf.zero_grad()
        total = 0.0
        for _ in range(settings.grad_accum):
            batch = [items[i] for i in sampler.next_batch()]
            with Tape():
                loss = forward_loss(batch, params, bank, train_prompts=train_prompts)
                backward(loss)
            total += loss.item()
        if settings.grad_accum > 1:
            inv = 1.0 / settings.grad_accum
            for t in model_tensors + leaves:
                if t.grad_array is not None:
                    t.grad_array *= inv
        adam_step(model_tensors, None, model_state)
        if prompt_state is not None:
            adam_step(leaves, None, prompt_state)
        losses.append(total / settings.grad_accum)
        if step_hook is not None:
            step_hook(step + 1)
    if bank is not None:
        for key in prompt_keys:
            bank.note_train_steps(*key, settings.steps)
    return losses
