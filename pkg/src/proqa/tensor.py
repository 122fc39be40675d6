"""Dense float64 tensors with a reverse-mode gradient tape and Adam.

Everything runs in 64-bit floats so finite-difference checks are tight.
Ops record onto the innermost active ``Tape``; outside any tape they are
plain numpy forward computations (used for inference and for the numeric
side of ``grad_check``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateBatchError, ParameterError, ShapeError


def _as_f64(value) -> np.ndarray:
    arr = np.ascontiguousarray(value, dtype=np.float64)
    if any(s == 0 for s in arr.shape):
        raise ShapeError(f"zero-sized dimension in shape {arr.shape}")
    return arr


class DTensor:
    """A dense float64 value, row-major, optionally tracked on a tape.

    ``data`` and ``grad`` expose the flat row-major buffers; ``array``
    and ``grad_array`` are the shaped views used internally. Gradients
    accumulate additively across backward passes until ``zero_grad``.
    """

    __slots__ = ("array", "requires_grad", "grad_array", "node")

    def __init__(self, value, requires_grad: bool = False):
        self.array = _as_f64(value)
        self.requires_grad = requires_grad
        self.grad_array: np.ndarray | None = None
        self.node: TapeNode | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.array.shape

    @property
    def data(self) -> np.ndarray:
        return self.array.reshape(-1)

    @property
    def grad(self) -> np.ndarray | None:
        return None if self.grad_array is None else self.grad_array.reshape(-1)

    def item(self) -> float:
        if self.array.size != 1:
            raise ShapeError(f"item() on non-scalar shape {self.shape}")
        return float(self.array.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad_array = None

    def detach(self) -> "DTensor":
        return DTensor(self.array)

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad_array is None:
            self.grad_array = np.zeros_like(self.array)
        self.grad_array += g

    def __repr__(self) -> str:
        return f"DTensor(shape={self.shape}, requires_grad={self.requires_grad})"


class TapeNode:
    __slots__ = ("inputs", "out", "backward_fn", "tape")

    def __init__(self, inputs, out, backward_fn, tape):
        self.inputs = inputs
        self.out = out
        self.backward_fn = backward_fn
        self.tape = tape


class Tape:
    """Ordered record of differentiable ops; backward walks it in reverse.

    Use as a context manager around a forward pass. Nodes are appended in
    creation order; the backward pass visits them in exact reverse order.
    """

    def __init__(self):
        self.nodes: list[TapeNode] = []

    def __enter__(self) -> "Tape":
        _tape_stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _tape_stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)


_tape_stack: list[Tape] = []


def active_tape() -> Tape | None:
    return _tape_stack[-1] if _tape_stack else None


def _record(out: DTensor, inputs: list[DTensor], backward_fn) -> DTensor:
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        node = TapeNode(inputs, out, backward_fn, tape)
        out.node = node
        tape.nodes.append(node)
    return out


def backward(loss: DTensor) -> None:
    """Populate .grad on every requires_grad leaf reachable from ``loss``.

    Accumulation is additive: a leaf used twice gets the sum, and repeated
    backward calls add onto existing grads (callers zero between steps).
    """
    if loss.array.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.node is None:
        raise ParameterError("loss is not recorded on a live tape")
    tape = loss.node.tape
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.array)}
    for node in reversed(tape.nodes):
        out_grad = pending.pop(id(node.out), None)
        if out_grad is None:
            continue
        input_grads = node.backward_fn(out_grad)
        for inp, g in zip(node.inputs, input_grads):
            if g is None or not inp.requires_grad:
                continue
            if inp.node is not None:
                key = id(inp)
                if key in pending:
                    pending[key] = pending[key] + g
                else:
                    pending[key] = g
            else:
                inp.accumulate_grad(g)


# ---------------------------------------------------------------------------
# ops
# ---------------------------------------------------------------------------


def matmul(a: DTensor, b: DTensor) -> DTensor:
    if a.array.ndim != 2 or b.array.ndim != 2:
        raise ShapeError(f"matmul needs 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} x {b.shape}")
    a_arr, b_arr = a.array, b.array
    out = DTensor(a_arr @ b_arr)

    def bk(g):
        return [g @ b_arr.T, a_arr.T @ g]

    return _record(out, [a, b], bk)


def add(a: DTensor, b: DTensor) -> DTensor:
    """Elementwise add; also accepts a 1-d bias matching a's last dim."""
    if a.shape == b.shape:
        out = DTensor(a.array + b.array)

        def bk(g):
            return [g, g]

        return _record(out, [a, b], bk)
    if b.array.ndim == 1 and a.array.ndim >= 1 and a.shape[-1] == b.shape[0]:
        out = DTensor(a.array + b.array)
        lead = tuple(range(a.array.ndim - 1))

        def bk(g):
            return [g, g.sum(axis=lead) if lead else g]

        return _record(out, [a, b], bk)
    raise ShapeError(f"add shapes incompatible: {a.shape} vs {b.shape}")


def neg(a: DTensor) -> DTensor:
    out = DTensor(-a.array)
    return _record(out, [a], lambda g: [-g])


def sub(a: DTensor, b: DTensor) -> DTensor:
    return add(a, neg(b))


def mul(a: DTensor, b: DTensor) -> DTensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul shapes differ: {a.shape} vs {b.shape}")
    a_arr, b_arr = a.array, b.array
    out = DTensor(a_arr * b_arr)

    def bk(g):
        return [g * b_arr, g * a_arr]

    return _record(out, [a, b], bk)


def scale(a: DTensor, s: float) -> DTensor:
    out = DTensor(a.array * s)
    return _record(out, [a], lambda g: [g * s])


def relu(a: DTensor) -> DTensor:
    mask = a.array > 0
    out = DTensor(np.where(mask, a.array, 0.0))
    return _record(out, [a], lambda g: [g * mask])


def transpose(a: DTensor) -> DTensor:
    if a.array.ndim != 2:
        raise ShapeError(f"transpose needs a 2-d operand, got {a.shape}")
    out = DTensor(np.ascontiguousarray(a.array.T))
    return _record(out, [a], lambda g: [g.T])


def concat(parts: list[DTensor], axis: int = 0) -> DTensor:
    if not parts:
        raise ShapeError("concat of zero parts")
    if axis not in (0, 1) or any(p.array.ndim != 2 for p in parts):
        raise ShapeError("concat supports 2-d operands on axis 0 or 1")
    out = DTensor(np.concatenate([p.array for p in parts], axis=axis))
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bk(g):
        if axis == 0:
            return [g[offsets[i]:offsets[i + 1], :] for i in range(len(parts))]
        return [g[:, offsets[i]:offsets[i + 1]] for i in range(len(parts))]

    return _record(out, list(parts), bk)


def narrow(a: DTensor, axis: int, start: int, length: int) -> DTensor:
    if a.array.ndim != 2 or axis not in (0, 1):
        raise ShapeError(f"narrow supports 2-d operands, got {a.shape} axis {axis}")
    if start < 0 or length < 1 or start + length > a.shape[axis]:
        raise ShapeError(f"narrow window [{start}:{start + length}] outside {a.shape}")
    if axis == 0:
        out = DTensor(a.array[start:start + length, :].copy())
    else:
        out = DTensor(a.array[:, start:start + length].copy())
    shape = a.shape

    def bk(g):
        full = np.zeros(shape)
        if axis == 0:
            full[start:start + length, :] = g
        else:
            full[:, start:start + length] = g
        return [full]

    return _record(out, [a], bk)


def embedding(table: DTensor, ids) -> DTensor:
    """Gather rows of a 2-d table; backward scatter-adds into the table."""
    idx = np.asarray(ids, dtype=np.int64)
    if table.array.ndim != 2 or idx.ndim != 1:
        raise ShapeError(f"embedding needs 2-d table and 1-d ids, got {table.shape}")
    if idx.size == 0 or idx.min() < 0 or idx.max() >= table.shape[0]:
        raise ShapeError(f"embedding ids out of range for table {table.shape}")
    out = DTensor(table.array[idx])
    rows = table.shape

    def bk(g):
        full = np.zeros(rows)
        np.add.at(full, idx, g)
        return [full]

    return _record(out, [table], bk)


def sum_all(a: DTensor) -> DTensor:
    out = DTensor(a.array.sum())
    shape = a.shape
    return _record(out, [a], lambda g: [np.full(shape, g.reshape(-1)[0])])


def softmax(x: DTensor, axis: int) -> DTensor:
    nd = x.array.ndim
    if not -nd <= axis < nd:
        raise ShapeError(f"softmax axis {axis} invalid for shape {x.shape}")
    shifted = x.array - x.array.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = DTensor(y)

    def bk(g):
        return [(g - (g * y).sum(axis=axis, keepdims=True)) * y]

    return _record(out, [x], bk)


def layer_norm(x: DTensor, gain: DTensor, bias: DTensor, eps: float = 1e-6) -> DTensor:
    """Normalize the last dimension to mean 0 / variance 1, then affine.

    A constant row has zero variance; eps keeps the output finite (all
    zeros before the affine step).
    """
    if eps <= 0:
        raise ParameterError(f"layer_norm eps must be > 0, got {eps}")
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(
            f"layer_norm gain/bias {gain.shape}/{bias.shape} do not match last dim {d}"
        )
    mean = x.array.mean(axis=-1, keepdims=True)
    var = x.array.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.array - mean) * inv
    out = DTensor(xhat * gain.array + bias.array)
    lead = tuple(range(x.array.ndim - 1))

    def bk(g):
        dxhat = g * gain.array
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        dgain = (g * xhat).sum(axis=lead) if lead else g * xhat
        dbias = g.sum(axis=lead) if lead else g
        return [dx, dgain, dbias]

    return _record(out, [x, gain, bias], bk)


def cross_entropy(logits: DTensor, targets, ignore_index: int = 0) -> DTensor:
    """Mean negative log-softmax of target tokens over non-ignored rows."""
    if logits.array.ndim != 2:
        raise ShapeError(f"cross_entropy needs [T x V] logits, got {logits.shape}")
    tgt = np.asarray(targets, dtype=np.int64)
    t_len, vocab = logits.shape
    if tgt.shape != (t_len,):
        raise ShapeError(f"targets length {tgt.shape} does not match T={t_len}")
    keep = tgt != ignore_index
    bad = keep & ((tgt < 0) | (tgt >= vocab))
    if bad.any():
        raise ParameterError(f"target {tgt[bad][0]} outside [0, {vocab})")
    n = int(keep.sum())
    if n == 0:
        raise DegenerateBatchError("every position carries ignore_index")

    z = logits.array - logits.array.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_probs = z - logsumexp
    rows = np.arange(t_len)
    picked = log_probs[rows, np.where(keep, tgt, 0)]
    out = DTensor(-(picked * keep).sum() / n)

    probs = np.exp(log_probs)

    def bk(g):
        d = probs.copy()
        d[rows, np.where(keep, tgt, 0)] -= 1.0
        d[~keep, :] = 0.0
        return [d * (g.reshape(-1)[0] / n)]

    return _record(out, [logits], bk)


def batched_attention(
    q: DTensor,
    k: DTensor,
    v: DTensor,
    q_sizes: list[int],
    kv_sizes: list[int],
    n_heads: int,
    causal: bool = False,
) -> DTensor:
    """Scaled dot-product attention over row-concatenated sequences.

    q is [sum(q_sizes) x d] and k/v are [sum(kv_sizes) x d]; instance i
    attends only within its own row block. Heads are column splits of d.
    One tape node covers the whole batch, which is what keeps training
    steps cheap.
    """
    d = q.shape[1]
    if d % n_heads != 0:
        raise ShapeError(f"width {d} not divisible by {n_heads} heads")
    if len(q_sizes) != len(kv_sizes):
        raise ShapeError(f"{len(q_sizes)} query blocks vs {len(kv_sizes)} key blocks")
    if sum(q_sizes) != q.shape[0] or sum(kv_sizes) != k.shape[0] or k.shape != v.shape:
        raise ShapeError(
            f"block sizes {sum(q_sizes)}/{sum(kv_sizes)} do not match rows "
            f"{q.shape[0]}/{k.shape[0]}/{v.shape[0]}"
        )
    if causal and q_sizes != kv_sizes:
        raise ShapeError("causal attention needs matching query/key blocks")
    head_dim = d // n_heads
    inv_sqrt = 1.0 / np.sqrt(head_dim)

    def to_heads(block: np.ndarray) -> np.ndarray:
        # [L, d] -> [h, L, head_dim]
        return np.ascontiguousarray(block.reshape(-1, n_heads, head_dim).transpose(1, 0, 2))

    out = np.empty_like(q.array)
    saved = []  # (q_lo, kv_lo, Lq, Lkv, attn weights [h, Lq, Lkv])
    q_lo = kv_lo = 0
    for lq, lkv in zip(q_sizes, kv_sizes):
        qh = to_heads(q.array[q_lo:q_lo + lq])
        kh = to_heads(k.array[kv_lo:kv_lo + lkv])
        vh = to_heads(v.array[kv_lo:kv_lo + lkv])
        scores = np.matmul(qh, kh.transpose(0, 2, 1)) * inv_sqrt
        if causal:
            scores += np.triu(np.full((lq, lkv), -1e9), k=1)
        scores -= scores.max(axis=-1, keepdims=True)
        e = np.exp(scores)
        weights = e / e.sum(axis=-1, keepdims=True)
        merged = np.matmul(weights, vh)  # [h, Lq, head_dim]
        out[q_lo:q_lo + lq] = merged.transpose(1, 0, 2).reshape(lq, d)
        saved.append((q_lo, kv_lo, lq, lkv, weights))
        q_lo += lq
        kv_lo += lkv

    result = DTensor(out)

    def bk(g):
        dq = np.zeros_like(q.array)
        dk = np.zeros_like(k.array)
        dv = np.zeros_like(v.array)
        for q_lo, kv_lo, lq, lkv, weights in saved:
            go = to_heads(g[q_lo:q_lo + lq])
            qh = to_heads(q.array[q_lo:q_lo + lq])
            kh = to_heads(k.array[kv_lo:kv_lo + lkv])
            vh = to_heads(v.array[kv_lo:kv_lo + lkv])
            dvh = np.matmul(weights.transpose(0, 2, 1), go)
            dw = np.matmul(go, vh.transpose(0, 2, 1))
            ds = (dw - (dw * weights).sum(axis=-1, keepdims=True)) * weights * inv_sqrt
            dqh = np.matmul(ds, kh)
            dkh = np.matmul(ds.transpose(0, 2, 1), qh)
            dq[q_lo:q_lo + lq] = dqh.transpose(1, 0, 2).reshape(lq, d)
            dk[kv_lo:kv_lo + lkv] = dkh.transpose(1, 0, 2).reshape(lkv, d)
            dv[kv_lo:kv_lo + lkv] = dvh.transpose(1, 0, 2).reshape(lkv, d)
        return [dq, dk, dv]

    return _record(result, [q, k, v], bk)


def token_log_losses(logits_arr: np.ndarray, targets) -> np.ndarray:
    """Per-position negative log-probabilities (pure numpy, no tape)."""
    tgt = np.asarray(targets, dtype=np.int64)
    z = logits_arr - logits_arr.max(axis=1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return -log_probs[np.arange(len(tgt)), tgt]


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """Adam moments with optional decoupled weight decay (off by default)."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ParameterError(f"betas must be in [0, 1): {self.beta1}, {self.beta2}")
        if self.t < 0:
            raise ParameterError(f"step counter must be >= 0, got {self.t}")

    @classmethod
    def for_params(cls, params: list[DTensor], lr: float, **kwargs) -> "AdamState":
        state = cls(lr=lr, **kwargs)
        state.m = [np.zeros_like(p.array) for p in params]
        state.v = [np.zeros_like(p.array) for p in params]
        return state


def adam_step(params: list[DTensor], grads, state: AdamState) -> None:
    """Bias-corrected Adam update, in place. ``grads=None`` reads .grad."""
    if grads is None:
        grads = [p.grad_array for p in params]
    if len(params) != len(state.m) or len(params) != len(grads):
        raise ShapeError(
            f"adam_step sizes differ: {len(params)} params, "
            f"{len(grads)} grads, {len(state.m)} moment slots"
        )
    for p, m in zip(params, state.m):
        if p.array.shape != m.shape:
            raise ShapeError(f"moment shape {m.shape} does not match param {p.shape}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p.array)
        g = g.reshape(p.array.shape)
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + state.eps)
        if state.weight_decay:
            update = update + state.weight_decay * p.array
        p.array -= state.lr * update


def grad_check(f, params: list[DTensor], h: float = 1e-5) -> float:
    """Max relative error between backward() grads and central differences.

    ``f`` re-runs the forward pass from the current parameter values and
    returns a scalar DTensor. The numeric side perturbs each element in
    place (restoring it), evaluating ``f`` outside any tape.
    """
    if h <= 0:
        raise ParameterError(f"finite-difference step must be > 0, got {h}")
    for p in params:
        p.zero_grad()
    with Tape():
        loss = f()
        backward(loss)
    analytic = [
        np.zeros_like(p.array) if p.grad_array is None else p.grad_array.copy()
        for p in params
    ]
    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.array.reshape(-1)
        gflat = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = f().item()
            flat[i] = orig - h
            f_minus = f().item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            denom = max(abs(gflat[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(gflat[i] - numeric) / denom)
    return worst
