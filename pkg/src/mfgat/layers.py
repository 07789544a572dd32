"""Learnable building blocks: LSTM unit and sequence, single- and multi-head
graph attention layers, and the two-branch attention fusion.

All layers are pure functions of (parameters, inputs) plus an optional
dropout stream; parameters are plain Tensors grouped in small containers so
the optimizer and checkpoint code can walk them by name.

Shapes use a leading batch-of-graphs convention: node features are
``[..., N, d]`` where ``...`` is an optional batch dimension, and the LSTM
works on row-major sequences ``[R, T, d_in]`` with R = batch * nodes.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .tensor import (
    Tensor,
    affine,
    concat,
    dropout,
    leaky_relu,
    masked_softmax,
    matmul,
    reshape,
    sigmoid,
    softmax,
    swap_last2,
    tanh,
)

ATTENTION_SLOPE = 0.2  # LeakyReLU slope for attention scores and hidden GAT output


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=shape))


# ---------------------------------------------------------------------------
# LSTM
# ---------------------------------------------------------------------------


class LstmState(NamedTuple):
    h: Tensor
    c: Tensor


class LstmParams:
    """Gate weights W_O/W_I/W_U/W_C [(hidden+input) x hidden] and biases."""

    GATES = ("O", "I", "U", "C")

    def __init__(self, weights, biases):
        self.W_O, self.W_I, self.W_U, self.W_C = weights
        self.b_O, self.b_I, self.b_U, self.b_C = biases
        shapes = {w.shape for w in weights}
        if len(shapes) != 1:
            raise ValueError("LSTM gate weight shapes differ")

    @classmethod
    def init(cls, rng: np.random.Generator, d_in: int, hidden: int) -> "LstmParams":
        weights = [glorot_uniform(rng, hidden + d_in, hidden, (hidden + d_in, hidden))
                   for _ in cls.GATES]
        biases = [Tensor(np.zeros(hidden)) for _ in cls.GATES]
        return cls(weights, biases)

    @classmethod
    def zeros(cls, d_in: int, hidden: int) -> "LstmParams":
        weights = [Tensor(np.zeros((hidden + d_in, hidden))) for _ in cls.GATES]
        biases = [Tensor(np.zeros(hidden)) for _ in cls.GATES]
        return cls(weights, biases)

    @property
    def hidden(self) -> int:
        return self.W_O.shape[1]

    @property
    def d_in(self) -> int:
        return self.W_O.shape[0] - self.hidden

    def named(self, prefix: str):
        for g in self.GATES:
            yield f"{prefix}.W_{g}", getattr(self, f"W_{g}")
        for g in self.GATES:
            yield f"{prefix}.b_{g}", getattr(self, f"b_{g}")

    def zero_state(self, rows: int) -> LstmState:
        return LstmState(Tensor(np.zeros((rows, self.hidden))),
                         Tensor(np.zeros((rows, self.hidden))))


def lstm_step(x_t: Tensor, state: LstmState, p: LstmParams) -> LstmState:
    """One LSTM unit update.

    Gates O/I/U and candidate C~ read the concatenation [h_prev; x_t]; then
    C_t = U*C_prev + I*C~ and h_t = O*tanh(C_t).
    """
    if x_t.shape[-1] != p.d_in:
        raise ValueError(f"lstm_step input width {x_t.shape[-1]} != {p.d_in}")
    hx = concat([state.h, x_t], axis=-1)
    o = sigmoid(affine(hx, p.W_O, p.b_O))
    i = sigmoid(affine(hx, p.W_I, p.b_I))
    u = sigmoid(affine(hx, p.W_U, p.b_U))
    c_tilde = tanh(affine(hx, p.W_C, p.b_C))
    c_new = u * state.c + i * c_tilde
    h_new = o * tanh(c_new)
    return LstmState(h_new, c_new)


def lstm_sequence_unrolled(x: Tensor, p: LstmParams) -> Tensor:
    """Reference unroll of lstm_step over x [R, T, d_in]; returns final h."""
    if x.ndim != 3:
        raise ValueError("lstm_sequence expects [rows, steps, d_in]")
    rows, steps, _ = x.shape
    if steps < 1:
        raise ValueError("sequence must have at least one step")
    state = p.zero_state(rows)
    for t in range(steps):
        state = lstm_step(x[:, t, :], state, p)
    return state.h


def lstm_sequence(x: Tensor, p: LstmParams) -> Tensor:
    """Final hidden state of the LSTM run over x [R, T, d_in].

    Fused implementation: one gate matmul per step and a hand-written
    backward-through-time pass, avoiding the per-op tape overhead of the
    step-by-step unroll. Matches lstm_sequence_unrolled exactly.
    """
    if x.ndim != 3:
        raise ValueError("lstm_sequence expects [rows, steps, d_in]")
    rows, steps, d_in = x.shape
    if steps < 1:
        raise ValueError("sequence must have at least one step")
    if d_in != p.d_in:
        raise ValueError(f"lstm_sequence input width {d_in} != {p.d_in}")
    hidden = p.hidden

    w_all = np.concatenate([p.W_O.data, p.W_I.data, p.W_U.data, p.W_C.data], axis=1)
    b_all = np.concatenate([p.b_O.data, p.b_I.data, p.b_U.data, p.b_C.data])

    xd = x.data
    hs = np.zeros((steps + 1, rows, hidden))
    cs = np.zeros((steps + 1, rows, hidden))
    gates = np.empty((steps, rows, 4 * hidden))
    for t in range(steps):
        hx = np.concatenate([hs[t], xd[:, t, :]], axis=1)
        z = hx @ w_all + b_all
        z[:, :3 * hidden] = 1.0 / (1.0 + np.exp(-z[:, :3 * hidden]))
        z[:, 3 * hidden:] = np.tanh(z[:, 3 * hidden:])
        o = z[:, :hidden]
        i = z[:, hidden:2 * hidden]
        u = z[:, 2 * hidden:3 * hidden]
        c_tilde = z[:, 3 * hidden:]
        cs[t + 1] = u * cs[t] + i * c_tilde
        hs[t + 1] = o * np.tanh(cs[t + 1])
        gates[t] = z

    def bwd(g):
        dh = g
        dc = np.zeros_like(g)
        dw_all = np.zeros_like(w_all)
        db_all = np.zeros_like(b_all)
        dx = np.zeros_like(xd)
        dz = np.empty((rows, 4 * hidden))
        for t in range(steps - 1, -1, -1):
            z = gates[t]
            o = z[:, :hidden]
            i = z[:, hidden:2 * hidden]
            u = z[:, 2 * hidden:3 * hidden]
            c_tilde = z[:, 3 * hidden:]
            tc = np.tanh(cs[t + 1])
            dc = dc + dh * o * (1.0 - tc * tc)
            do = dh * tc
            di = dc * c_tilde
            du = dc * cs[t]
            dct = dc * i
            dz[:, :hidden] = do * o * (1.0 - o)
            dz[:, hidden:2 * hidden] = di * i * (1.0 - i)
            dz[:, 2 * hidden:3 * hidden] = du * u * (1.0 - u)
            dz[:, 3 * hidden:] = dct * (1.0 - c_tilde * c_tilde)
            hx = np.concatenate([hs[t], xd[:, t, :]], axis=1)
            dw_all += hx.T @ dz
            db_all += dz.sum(axis=0)
            dhx = dz @ w_all.T
            dh = dhx[:, :hidden]
            dx[:, t, :] = dhx[:, hidden:]
            dc = dc * u
        dws = np.split(dw_all, 4, axis=1)
        dbs = np.split(db_all, 4)
        return (dx, *dws, *dbs)

    parents = (x, p.W_O, p.W_I, p.W_U, p.W_C, p.b_O, p.b_I, p.b_U, p.b_C)
    return Tensor(hs[steps], parents, bwd)


# ---------------------------------------------------------------------------
# Graph attention
# ---------------------------------------------------------------------------


class GatParams:
    """Per-head projection W [d_in x d_out] and attention vector a [2*d_out]."""

    def __init__(self, weights, att_vectors):
        if len(weights) != len(att_vectors) or not weights:
            raise ValueError("need one attention vector per head")
        self.weights = list(weights)
        self.att_vectors = list(att_vectors)
        for w, a in zip(self.weights, self.att_vectors):
            if a.shape != (2 * w.shape[1],):
                raise ValueError(f"attention vector {a.shape} does not match head width {w.shape[1]}")

    @classmethod
    def init(cls, rng: np.random.Generator, d_in: int, d_out: int, heads: int = 1) -> "GatParams":
        weights = [glorot_uniform(rng, d_in, d_out, (d_in, d_out)) for _ in range(heads)]
        att = [glorot_uniform(rng, 2 * d_out, 1, (2 * d_out,)) for _ in range(heads)]
        return cls(weights, att)

    @property
    def heads(self) -> int:
        return len(self.weights)

    @property
    def d_in(self) -> int:
        return self.weights[0].shape[0]

    @property
    def d_out(self) -> int:
        return self.weights[0].shape[1]

    def named(self, prefix: str):
        for k, (w, a) in enumerate(zip(self.weights, self.att_vectors)):
            yield f"{prefix}.head{k}.W", w
            yield f"{prefix}.head{k}.a", a


def _check_adjacency(adjacency) -> np.ndarray:
    adj = np.asarray(adjacency, dtype=bool)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise ValueError("adjacency must be a square matrix")
    if not adj.diagonal().all():
        raise ValueError("adjacency must contain self-loops")
    return adj


def gat_head(h: Tensor, adjacency, w: Tensor, a: Tensor, activation=None,
             drop_p: float = 0.0, training: bool = False, rng=None):
    """Single attention head over node features h [..., N, d_in].

    Scores e_ij = LeakyReLU(a . [z_i || z_j]) for j in the neighborhood of i,
    normalized per node by softmax; output is act(sum_j alpha_ij z_j).
    Returns (output [..., N, d_out], attention [..., N, N]); the returned
    attention is the normalized coefficient matrix (before dropout), zero at
    non-edges.
    """
    adj = _check_adjacency(adjacency)
    if h.shape[-2] != adj.shape[0]:
        raise ValueError(f"{h.shape[-2]} nodes vs adjacency {adj.shape}")
    d_out = w.shape[1]
    hd = dropout(h, drop_p, training, rng)
    z = matmul(hd, w)
    a_src = reshape(a[:d_out], (d_out, 1))
    a_dst = reshape(a[d_out:], (d_out, 1))
    s_src = matmul(z, a_src)
    s_dst = matmul(z, a_dst)
    e = leaky_relu(s_src + swap_last2(s_dst), ATTENTION_SLOPE)
    att = masked_softmax(e, adj, axis=-1)
    agg = matmul(dropout(att, drop_p, training, rng), z)
    out = agg if activation is None else activation(agg)
    return out, att


def gat_layer(h: Tensor, adjacency, p: GatParams, activation=None,
              drop_p: float = 0.0, training: bool = False, rng=None):
    """Single-head GAT convolution (p must have exactly one head)."""
    if p.heads != 1:
        raise ValueError("gat_layer expects single-head parameters; use mhgat_layer")
    return gat_head(h, adjacency, p.weights[0], p.att_vectors[0], activation,
                    drop_p, training, rng)


def mhgat_layer(h: Tensor, adjacency, p: GatParams, activation=None,
                drop_p: float = 0.0, training: bool = False, rng=None):
    """K independent attention heads, outputs concatenated per node in head
    order. Returns (output [..., N, K*d_out], list of per-head attentions)."""
    outs, atts = [], []
    for w, a in zip(p.weights, p.att_vectors):
        out, att = gat_head(h, adjacency, w, a, activation, drop_p, training, rng)
        outs.append(out)
        atts.append(att)
    if len(outs) == 1:
        return outs[0], atts
    return concat(outs, axis=-1), atts


# ---------------------------------------------------------------------------
# Two-branch attention fusion
# ---------------------------------------------------------------------------


class FuseParams:
    """Per-branch score maps: W_T/W_F [d x 1] and scalar biases b_T/b_F."""

    def __init__(self, w_t: Tensor, b_t: Tensor, w_f: Tensor, b_f: Tensor):
        if w_t.shape != w_f.shape or w_t.shape[1] != 1:
            raise ValueError("fusion score maps must both be [d x 1]")
        self.W_T, self.b_T = w_t, b_t
        self.W_F, self.b_F = w_f, b_f

    @classmethod
    def init(cls, rng: np.random.Generator, d: int) -> "FuseParams":
        return cls(glorot_uniform(rng, d, 1, (d, 1)), Tensor(np.zeros(1)),
                   glorot_uniform(rng, d, 1, (d, 1)), Tensor(np.zeros(1)))

    def named(self, prefix: str):
        yield f"{prefix}.W_T", self.W_T
        yield f"{prefix}.b_T", self.b_T
        yield f"{prefix}.W_F", self.W_F
        yield f"{prefix}.b_F", self.b_F


def attention_fuse(h_t: Tensor, h_f: Tensor, p: FuseParams, force_weights=None):
    """Convex per-node combination of the two branch embeddings.

    Per node, scalar scores s_T = tanh(W_T . h_T + b_T) and
    s_F = tanh(W_F . h_F + b_F) are normalized across the pair by softmax,
    so the two weights sum to one and the output lies coordinatewise between
    the branch vectors. Returns (fused [..., N, d], weights [..., N, 2]).

    ``force_weights`` is a diagnostic override (a_T, a_F) that bypasses the
    learned scores, e.g. (1.0, 0.0) routes the source branch straight through.
    """
    if h_t.shape != h_f.shape:
        raise ValueError(f"branch shapes differ: {h_t.shape} vs {h_f.shape}")
    if force_weights is not None:
        at, af = force_weights
        fused = at * h_t + af * h_f
        w = np.broadcast_to(np.array([at, af], dtype=np.float64), h_t.shape[:-1] + (2,))
        return fused, Tensor(w.copy())
    s_t = tanh(affine(h_t, p.W_T, p.b_T))
    s_f = tanh(affine(h_f, p.W_F, p.b_F))
    weights = softmax(concat([s_t, s_f], axis=-1), axis=-1)
    a_t = weights[..., 0:1]
    a_f = weights[..., 1:2]
    fused = a_t * h_t + a_f * h_f
    return fused, weights
