"""Tiny text-to-text transformer with soft-prompt slot injection.

Pre-norm encoder/decoder stacks over the autodiff tensor core. The
token-embedding table is shared between encoder, decoder, and output
projection; key-indicator and hard-prompt rows are ordinary trainable
rows of that table. Positions use learned absolute embeddings.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from .errors import (
    ConfigError,
    FileFormatError,
    ResolutionError,
    SequenceLengthError,
)
from .schema import CompiledInput
from .tensor import (
    DTensor,
    add,
    batched_attention,
    concat,
    cross_entropy,
    embedding,
    layer_norm,
    matmul,
    mul,
    relu,
    token_log_losses,
    transpose,
)
from .tokenizer import EOS, PAD


@dataclass
class ModelConfig:
    d_model: int
    n_layers: int
    n_heads: int
    d_ff: int
    vocab_size: int
    max_len: int
    dropout: float = 0.0

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ConfigError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")


@dataclass
class GenerationConfig:
    max_new_tokens: int = 16
    strategy: str = "greedy"

    def __post_init__(self):
        if self.max_new_tokens < 1:
            raise ConfigError(f"max_new_tokens must be >= 1, got {self.max_new_tokens}")
        if self.strategy != "greedy":
            raise ConfigError(f"unsupported decoding strategy {self.strategy!r}")


@dataclass
class GenerationResult:
    ids: list[int]
    truncated: bool


class ModelParams:
    """Named parameter tensors; iteration order is fixed at creation."""

    def __init__(self, config: ModelConfig, tensors: dict[str, DTensor]):
        self.config = config
        self.tensors = tensors

    def __getitem__(self, name: str) -> DTensor:
        return self.tensors[name]

    def items(self):
        return self.tensors.items()

    def trainable(self) -> list[DTensor]:
        return list(self.tensors.values())

    def zero_grads(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()

    def set_requires_grad(self, flag: bool) -> None:
        for t in self.tensors.values():
            t.requires_grad = flag


def _proj_names(prefix: str) -> list[str]:
    return [f"{prefix}.{w}" for w in ("wq", "wk", "wv", "wo")]


def _layer_names(config: ModelConfig) -> list[str]:
    names = ["tok_emb", "pos_emb"]
    for i in range(config.n_layers):
        names += [f"enc{i}.ln1.g", f"enc{i}.ln1.b"]
        names += _proj_names(f"enc{i}.attn")
        names += [f"enc{i}.ln2.g", f"enc{i}.ln2.b"]
        names += [f"enc{i}.ff.w1", f"enc{i}.ff.b1", f"enc{i}.ff.w2", f"enc{i}.ff.b2"]
    names += ["enc_ln.g", "enc_ln.b"]
    for i in range(config.n_layers):
        names += [f"dec{i}.ln1.g", f"dec{i}.ln1.b"]
        names += _proj_names(f"dec{i}.self")
        names += [f"dec{i}.ln2.g", f"dec{i}.ln2.b"]
        names += _proj_names(f"dec{i}.cross")
        names += [f"dec{i}.ln3.g", f"dec{i}.ln3.b"]
        names += [f"dec{i}.ff.w1", f"dec{i}.ff.b1", f"dec{i}.ff.w2", f"dec{i}.ff.b2"]
    names += ["dec_ln.g", "dec_ln.b"]
    return names


def _param_shape(name: str, c: ModelConfig) -> tuple[int, ...]:
    if name == "tok_emb":
        return (c.vocab_size, c.d_model)
    if name == "pos_emb":
        return (c.max_len, c.d_model)
    leaf = name.split(".")[-1]
    if leaf in ("wq", "wk", "wv", "wo"):
        return (c.d_model, c.d_model)
    if leaf == "w1":
        return (c.d_model, c.d_ff)
    if leaf == "b1":
        return (c.d_ff,)
    if leaf == "w2":
        return (c.d_ff, c.d_model)
    if leaf in ("b2", "g", "b"):
        return (c.d_model,)
    raise ConfigError(f"unknown parameter {name}")


def init_model_params(config: ModelConfig, seed: int, init_scale: float = 0.02) -> ModelParams:
    rng = np.random.default_rng([seed, 20513])
    tensors: dict[str, DTensor] = {}
    for name in _layer_names(config):
        shape = _param_shape(name, config)
        leaf = name.split(".")[-1]
        if leaf == "g":
            value = np.ones(shape)
        elif leaf in ("b", "b1", "b2"):
            value = np.zeros(shape)
        else:
            value = rng.normal(0.0, init_scale, size=shape)
        tensors[name] = DTensor(value, requires_grad=True)
    return ModelParams(config, tensors)


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------
# Whole batches run as one row-concatenated [sum(L_i) x d] matrix; only
# attention sees the per-instance block boundaries.


def _attention_block(
    x_q: DTensor,
    x_kv: DTensor,
    params: ModelParams,
    prefix: str,
    q_sizes: list[int],
    kv_sizes: list[int],
    causal: bool,
) -> DTensor:
    merged = batched_attention(
        matmul(x_q, params[f"{prefix}.wq"]),
        matmul(x_kv, params[f"{prefix}.wk"]),
        matmul(x_kv, params[f"{prefix}.wv"]),
        q_sizes,
        kv_sizes,
        params.config.n_heads,
        causal=causal,
    )
    return matmul(merged, params[f"{prefix}.wo"])


def _feed_forward(x: DTensor, params: ModelParams, prefix: str) -> DTensor:
    h = relu(add(matmul(x, params[f"{prefix}.w1"]), params[f"{prefix}.b1"]))
    return add(matmul(h, params[f"{prefix}.w2"]), params[f"{prefix}.b2"])


def _maybe_dropout(x: DTensor, p: float, rng) -> DTensor:
    if p <= 0.0 or rng is None:
        return x
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return mul(x, DTensor(mask))


def embed_with_prompts(
    ci: CompiledInput,
    params: ModelParams,
    bank,
    overrides: dict | None = None,
    train_prompts: bool = False,
) -> DTensor:
    """Token embeddings with slot positions replaced by bank matrices.

    ``overrides`` maps (kind, name) to a matrix used instead of the bank
    entry; with ``train_prompts`` the bank entries participate in the
    tape as trainable leaves.
    """
    d_model = params.config.d_model
    parts: list[DTensor] = []
    cursor = 0
    for start, length, key in ci.soft_slots:
        if start != cursor:
            raise ResolutionError(f"slot at {start} is not contiguous with prefix {cursor}")
        cursor += length
        if length == 0:
            continue
        if overrides is not None and key in overrides:
            matrix = np.asarray(overrides[key], dtype=np.float64)
            part = DTensor(matrix)
        else:
            if bank is None:
                raise ResolutionError(f"no prompt bank to resolve {key}")
            if train_prompts:
                part = bank.leaf(*key)
                matrix = part.array
            else:
                matrix = bank.get(*key)
                part = DTensor(matrix)
        if matrix.shape != (length, d_model):
            raise ResolutionError(
                f"prompt {key} has shape {matrix.shape}, slot needs {(length, d_model)}"
            )
        parts.append(part)
    content = ci.ids[cursor:]
    if content:
        parts.append(embedding(params["tok_emb"], content))
    return parts[0] if len(parts) == 1 else concat(parts, axis=0)


def _encode_batch(
    cis: list[CompiledInput],
    params: ModelParams,
    bank,
    overrides: dict | None,
    train_prompts: bool,
    rng,
) -> tuple[DTensor, list[int]]:
    c = params.config
    embeds = []
    positions: list[int] = []
    sizes = []
    for ci in cis:
        if ci.length > c.max_len:
            raise SequenceLengthError(f"input length {ci.length} exceeds max_len {c.max_len}")
        embeds.append(
            embed_with_prompts(ci, params, bank, overrides=overrides, train_prompts=train_prompts)
        )
        positions.extend(range(ci.length))
        sizes.append(ci.length)
    x = embeds[0] if len(embeds) == 1 else concat(embeds, axis=0)
    x = add(x, embedding(params["pos_emb"], positions))
    for i in range(c.n_layers):
        h = layer_norm(x, params[f"enc{i}.ln1.g"], params[f"enc{i}.ln1.b"])
        attn = _attention_block(h, h, params, f"enc{i}.attn", sizes, sizes, causal=False)
        x = add(x, _maybe_dropout(attn, c.dropout, rng))
        h = layer_norm(x, params[f"enc{i}.ln2.g"], params[f"enc{i}.ln2.b"])
        x = add(x, _maybe_dropout(_feed_forward(h, params, f"enc{i}.ff"), c.dropout, rng))
    return layer_norm(x, params["enc_ln.g"], params["enc_ln.b"]), sizes


def _decode_batch(
    dec_inputs: list[list[int]],
    enc_out: DTensor,
    enc_sizes: list[int],
    params: ModelParams,
    rng,
) -> DTensor:
    c = params.config
    flat: list[int] = []
    positions: list[int] = []
    sizes = []
    for seq in dec_inputs:
        if len(seq) > c.max_len:
            raise SequenceLengthError(f"decoder length {len(seq)} exceeds max_len {c.max_len}")
        flat.extend(seq)
        positions.extend(range(len(seq)))
        sizes.append(len(seq))
    x = add(embedding(params["tok_emb"], flat), embedding(params["pos_emb"], positions))
    for i in range(c.n_layers):
        h = layer_norm(x, params[f"dec{i}.ln1.g"], params[f"dec{i}.ln1.b"])
        attn = _attention_block(h, h, params, f"dec{i}.self", sizes, sizes, causal=True)
        x = add(x, _maybe_dropout(attn, c.dropout, rng))
        h = layer_norm(x, params[f"dec{i}.ln2.g"], params[f"dec{i}.ln2.b"])
        attn = _attention_block(h, enc_out, params, f"dec{i}.cross", sizes, enc_sizes, causal=False)
        x = add(x, _maybe_dropout(attn, c.dropout, rng))
        h = layer_norm(x, params[f"dec{i}.ln3.g"], params[f"dec{i}.ln3.b"])
        x = add(x, _maybe_dropout(_feed_forward(h, params, f"dec{i}.ff"), c.dropout, rng))
    x = layer_norm(x, params["dec_ln.g"], params["dec_ln.b"])
    return matmul(x, transpose(params["tok_emb"]))


def encoder_forward(
    ci: CompiledInput,
    params: ModelParams,
    bank,
    overrides: dict | None = None,
    train_prompts: bool = False,
    rng=None,
) -> DTensor:
    out, _ = _encode_batch([ci], params, bank, overrides, train_prompts, rng)
    return out


def decoder_logits(dec_ids: list[int], enc_out: DTensor, params: ModelParams, rng=None) -> DTensor:
    return _decode_batch([list(dec_ids)], enc_out, [enc_out.shape[0]], params, rng)


def forward_loss(
    batch: list[tuple[CompiledInput, list[int]]],
    params: ModelParams,
    bank,
    overrides: dict | None = None,
    train_prompts: bool = False,
    rng=None,
) -> DTensor:
    """Teacher-forced cross-entropy pooled over all non-PAD target tokens.

    Decoding starts from PAD; targets must end with EOS and may carry
    PAD padding, which is excluded from the mean.
    """
    enc_out, enc_sizes = _encode_batch(
        [ci for ci, _ in batch], params, bank, overrides, train_prompts, rng
    )
    dec_inputs = [[PAD] + list(targets[:-1]) for _, targets in batch]
    logits = _decode_batch(dec_inputs, enc_out, enc_sizes, params, rng)
    all_targets = [t for _, targets in batch for t in targets]
    return cross_entropy(logits, all_targets, ignore_index=PAD)


def generate(
    ci: CompiledInput,
    params: ModelParams,
    bank,
    gc: GenerationConfig,
    overrides: dict | None = None,
) -> GenerationResult:
    """Greedy decoding from the PAD start token until EOS or the cap."""
    enc_out = encoder_forward(ci, params, bank, overrides=overrides)
    out: list[int] = []
    dec = [PAD]
    for _ in range(gc.max_new_tokens):
        logits = decoder_logits(dec, enc_out, params)
        next_id = int(np.argmax(logits.array[-1]))
        if next_id == EOS:
            return GenerationResult(ids=out, truncated=False)
        out.append(next_id)
        dec.append(next_id)
    return GenerationResult(ids=out, truncated=True)


def sequence_token_losses(
    ci: CompiledInput,
    targets: list[int],
    params: ModelParams,
    bank,
    overrides: dict | None = None,
) -> np.ndarray:
    """Per-token negative log-probabilities of ``targets`` (teacher forced)."""
    enc_out = encoder_forward(ci, params, bank, overrides=overrides)
    dec_in = [PAD] + list(targets[:-1])
    logits = decoder_logits(dec_in, enc_out, params)
    return token_log_losses(logits.array, targets)


# ---------------------------------------------------------------------------
# checkpoint persistence
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"PQCK"
CHECKPOINT_VERSION = 1


def save_checkpoint(params: ModelParams, path) -> None:
    """Versioned binary: magic, config JSON, then named float64 tensors."""
    config_blob = json.dumps(asdict(params.config), sort_keys=True).encode("utf-8")
    chunks = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION)]
    chunks.append(struct.pack("<I", len(config_blob)))
    chunks.append(config_blob)
    chunks.append(struct.pack("<I", len(params.tensors)))
    for name, tensor in params.items():
        name_b = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(name_b)))
        chunks.append(name_b)
        chunks.append(struct.pack("<I", tensor.array.ndim))
        chunks.append(struct.pack(f"<{tensor.array.ndim}I", *tensor.array.shape))
        chunks.append(tensor.array.astype("<f8").tobytes())
    from .fileio import atomic_write_bytes

    atomic_write_bytes(path, b"".join(chunks))


def load_checkpoint(path) -> ModelParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    view = memoryview(blob)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise FileFormatError(f"truncated checkpoint {path}")
        out = view[pos:pos + n]
        pos += n
        return out

    if bytes(take(4)) != CHECKPOINT_MAGIC:
        raise FileFormatError(f"{path} is not a model checkpoint")
    version = struct.unpack("<I", take(4))[0]
    if version != CHECKPOINT_VERSION:
        raise FileFormatError(
            f"checkpoint version {version} != supported {CHECKPOINT_VERSION}"
        )
    config = ModelConfig(**json.loads(bytes(take(struct.unpack("<I", take(4))[0]))))
    n_tensors = struct.unpack("<I", take(4))[0]
    tensors: dict[str, DTensor] = {}
    for _ in range(n_tensors):
        name = bytes(take(struct.unpack("<I", take(4))[0])).decode("utf-8")
        ndim = struct.unpack("<I", take(4))[0]
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(take(8 * count), dtype="<f8").reshape(shape)
        tensors[name] = DTensor(data.copy(), requires_grad=True)
    if pos != len(view):
        raise FileFormatError(f"{path} has {len(view) - pos} trailing bytes")
    return ModelParams(config, tensors)
