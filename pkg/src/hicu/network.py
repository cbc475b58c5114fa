"""Encoder / per-label-attention decoder with hand-derived gradients.

The encoder is a single same-padded 1-D convolution with tanh over word
embeddings, producing H of shape (N, d_f).  The decoder computes one
softmax-over-tokens attention column per label from a query matrix that
may be corrected with hyperbolic label embeddings, then applies a linear
layer with sum pooling and a sigmoid.

All arrays are float64.  Forward/backward accept a single document (N,)
or a batch of equal-length documents (B, N).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .losses import sigmoid

CORRECTION_MODES = ("none", "add", "concat")


@dataclass
class EncoderParams:
    embedding: np.ndarray  # (|vocab|, d_e)
    kernel: np.ndarray  # (s, d_e, d_f)
    bias: np.ndarray  # (d_f,)
    finetune_embeddings: bool = True

    def __post_init__(self):
        s = self.kernel.shape[0]
        if s % 2 == 0:
            raise ValueError("kernel width must be odd for same padding")
        if self.kernel.shape[2] < 1:
            raise ValueError("d_f must be >= 1")

    @property
    def d_f(self) -> int:
        return self.kernel.shape[2]


@dataclass
class DecoderParams:
    Q: np.ndarray  # (d_f, L)
    W: np.ndarray  # (d_f, L)
    b: np.ndarray  # (L,)
    mode: str = "none"
    fc_w: np.ndarray | None = None  # add: (d_f, d_h); concat: (d_f, d_f + d_h)
    fc_b: np.ndarray | None = None  # (d_f,)

    def __post_init__(self):
        if self.mode not in CORRECTION_MODES:
            raise ValueError(f"unknown correction mode {self.mode!r}")
        L = self.Q.shape[1]
        if self.W.shape[1] != L or self.b.shape[0] != L:
            raise ValueError("Q, W and b must agree on the label count")
        if self.mode != "none" and (self.fc_w is None or self.fc_b is None):
            raise ValueError(f"correction mode {self.mode!r} requires a transform")

    @property
    def n_labels(self) -> int:
        return self.Q.shape[1]


@dataclass
class ForwardTrace:
    x: np.ndarray  # (B, N) token indices
    emb: np.ndarray  # (B, N, d_e)
    windows: np.ndarray  # (B, N, s * d_e)
    H: np.ndarray  # (B, N, d_f)
    qhat: np.ndarray  # (d_f, L)
    A: np.ndarray  # (B, N, L)
    V: np.ndarray  # (B, L, d_f)
    logits: np.ndarray  # (B, L)
    E_h: np.ndarray | None
    batched: bool


def xavier_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_encoder(
    rng: np.random.Generator,
    vocab_size: int,
    d_e: int,
    d_f: int,
    kernel_size: int,
    embedding: np.ndarray | None = None,
    finetune_embeddings: bool = True,
) -> EncoderParams:
    if embedding is None:
        embedding = rng.uniform(-0.1, 0.1, size=(vocab_size, d_e))
        embedding[0] = 0.0  # PAD row
    kernel = xavier_uniform(
        rng, (kernel_size, d_e, d_f), fan_in=kernel_size * d_e, fan_out=d_f
    )
    return EncoderParams(
        embedding=np.asarray(embedding, dtype=np.float64),
        kernel=kernel,
        bias=np.zeros(d_f),
        finetune_embeddings=finetune_embeddings,
    )


def init_fc(rng: np.random.Generator, d_f: int, d_h: int, mode: str) -> tuple[np.ndarray, np.ndarray]:
    d_in = d_h if mode == "add" else d_f + d_h
    return xavier_uniform(rng, (d_f, d_in), fan_in=d_in, fan_out=d_f), np.zeros(d_f)


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x)
    if x.ndim == 1:
        return x[None, :], False
    if x.ndim == 2:
        return x, True
    raise ValueError("token input must be 1-D or 2-D")


def _im2col(emb: np.ndarray, s: int) -> np.ndarray:
    """Zero-padded sliding windows: (B, N, d_e) -> (B, N, s*d_e)."""
    B, N, d_e = emb.shape
    half = s // 2
    padded = np.zeros((B, N + 2 * half, d_e))
    padded[:, half : half + N] = emb
    cols = np.empty((B, N, s * d_e))
    for j in range(s):
        cols[:, :, j * d_e : (j + 1) * d_e] = padded[:, j : j + N]
    return cols


def encode(x: np.ndarray, enc: EncoderParams) -> np.ndarray:
    """H = tanh(conv1d_same(embed(x))); returns (N, d_f) or (B, N, d_f)."""
    xb, batched = _as_batch(x)
    if xb.size and int(xb.max()) >= enc.embedding.shape[0]:
        raise ValueError("token index out of vocabulary range")
    emb = enc.embedding[xb]
    s = enc.kernel.shape[0]
    windows = _im2col(emb, s)
    kflat = enc.kernel.reshape(s * enc.kernel.shape[1], enc.d_f)
    H = np.tanh(windows @ kflat + enc.bias)
    return H if batched else H[0]


def corrected_queries(
    Q: np.ndarray, E_h: np.ndarray | None, mode: str,
    fc_w: np.ndarray | None = None, fc_b: np.ndarray | None = None,
) -> np.ndarray:
    """Apply the hyperbolic correction to the query matrix.

    add:    qhat_c = q_c + fc(e_c)
    concat: qhat_c = fc(q_c ++ e_c)
    """
    if mode == "none":
        return Q
    if E_h is None:
        raise ValueError(f"correction mode {mode!r} requires hyperbolic rows")
    if E_h.shape[0] != Q.shape[1]:
        raise ValueError("hyperbolic row count must match the label count")
    if mode == "add":
        if fc_w.shape != (Q.shape[0], E_h.shape[1]):
            raise ValueError("transform shape mismatch for mode add")
        return Q + fc_w @ E_h.T + fc_b[:, None]
    if mode == "concat":
        d_f = Q.shape[0]
        if fc_w.shape != (d_f, d_f + E_h.shape[1]):
            raise ValueError("transform shape mismatch for mode concat")
        wq, we = fc_w[:, :d_f], fc_w[:, d_f:]
        return wq @ Q + we @ E_h.T + fc_b[:, None]
    raise ValueError(f"unknown correction mode {mode!r}")


def decode(
    H: np.ndarray, dec: DecoderParams, E_h: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray, dict]:
    """Per-label attention, linear layer and sum pooling.

    Returns (A, yhat, partial trace).  The softmax runs along the token
    axis so each label's attention column sums to 1.
    """
    Hb = H[None] if H.ndim == 2 else H
    qhat = corrected_queries(dec.Q, E_h, dec.mode, dec.fc_w, dec.fc_b)
    scores = Hb @ qhat  # (B, N, L)
    scores = scores - scores.max(axis=1, keepdims=True)
    exps = np.exp(scores)
    A = exps / exps.sum(axis=1, keepdims=True)
    V = np.matmul(A.transpose(0, 2, 1), Hb)  # (B, L, d_f)
    w_sum = dec.W.sum(axis=1)  # sum pooling of Z = V W collapses W to row sums
    logits = V @ w_sum + dec.b
    yhat = sigmoid(logits)
    partial = {"qhat": qhat, "A": A, "V": V, "logits": logits}
    if H.ndim == 2:
        return A[0], yhat[0], partial
    return A, yhat, partial


def forward(
    x: np.ndarray, enc: EncoderParams, dec: DecoderParams,
    E_h: np.ndarray | None = None,
) -> tuple[np.ndarray, ForwardTrace]:
    """Full forward pass; returns sigmoid outputs and a trace for backward."""
    xb, batched = _as_batch(x)
    emb = enc.embedding[xb]
    s = enc.kernel.shape[0]
    windows = _im2col(emb, s)
    kflat = enc.kernel.reshape(s * enc.kernel.shape[1], enc.d_f)
    H = np.tanh(windows @ kflat + enc.bias)
    _, yhat, partial = decode(H, dec, E_h)
    trace = ForwardTrace(
        x=xb, emb=emb, windows=windows, H=H,
        qhat=partial["qhat"], A=partial["A"], V=partial["V"],
        logits=partial["logits"], E_h=E_h, batched=batched,
    )
    return (yhat if batched else yhat[0]), trace


def backward(
    trace: ForwardTrace, enc: EncoderParams, dec: DecoderParams, dlogits: np.ndarray
) -> dict[str, np.ndarray]:
    """Exact gradients of a scalar loss given its gradient w.r.t. the logits.

    Returns a dict with keys Q, W, b, kernel, bias, optionally fc_w/fc_b and
    (iff finetune_embeddings) embedding.
    """
    dY = np.asarray(dlogits, dtype=np.float64)
    if dY.ndim == 1:
        dY = dY[None, :]
    B, N, d_f = trace.H.shape
    L = dec.n_labels
    if dY.shape != (B, L):
        raise ValueError("dlogits shape does not match the trace")

    w_sum = dec.W.sum(axis=1)
    # logits = V @ w_sum + b
    dV = dY[:, :, None] * w_sum[None, None, :]  # (B, L, d_f)
    dw_sum = np.einsum("blf,bl->f", trace.V, dY)
    dW = np.repeat(dw_sum[:, None], L, axis=1)  # every column of W gets the same grad
    db = dY.sum(axis=0)

    # V = A^T H
    dA = np.matmul(trace.H, dV.transpose(0, 2, 1))  # (B, N, L)
    dH = np.matmul(trace.A, dV)  # (B, N, d_f)

    # column softmax over tokens
    dS = trace.A * (dA - np.sum(trace.A * dA, axis=1, keepdims=True))

    # scores = H @ qhat
    dqhat = np.einsum("bnf,bnl->fl", trace.H, dS)
    dH += np.matmul(dS, trace.qhat.T)

    grads: dict[str, np.ndarray] = {"W": dW, "b": db}
    if dec.mode == "none":
        grads["Q"] = dqhat
    elif dec.mode == "add":
        grads["Q"] = dqhat
        grads["fc_w"] = dqhat @ trace.E_h
        grads["fc_b"] = dqhat.sum(axis=1)
    else:  # concat
        wq = dec.fc_w[:, :d_f]
        grads["Q"] = wq.T @ dqhat
        grads["fc_w"] = np.concatenate([dqhat @ dec.Q.T, dqhat @ trace.E_h], axis=1)
        grads["fc_b"] = dqhat.sum(axis=1)

    # H = tanh(windows @ kflat + bias)
    dpre = dH * (1.0 - trace.H**2)
    s, d_e = enc.kernel.shape[0], enc.kernel.shape[1]
    kflat = enc.kernel.reshape(s * d_e, d_f)
    dkflat = np.einsum("bnc,bnf->cf", trace.windows, dpre)
    grads["kernel"] = dkflat.reshape(s, d_e, d_f)
    grads["bias"] = dpre.sum(axis=(0, 1))

    if enc.finetune_embeddings:
        dwindows = np.matmul(dpre, kflat.T)  # (B, N, s*d_e)
        half = s // 2
        demb_pad = np.zeros((B, N + 2 * half, d_e))
        for j in range(s):
            demb_pad[:, j : j + N] += dwindows[:, :, j * d_e : (j + 1) * d_e]
        demb = demb_pad[:, half : half + N]
        dembedding = np.zeros_like(enc.embedding)
        np.add.at(dembedding, trace.x.ravel(), demb.reshape(-1, d_e))
        grads["embedding"] = dembedding
    return grads


@dataclass
class AdamState:
    """Adam accumulators for a named parameter collection."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], adam: AdamState) -> None:
    """One bias-corrected Adam update, in place on the parameter dict."""
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
        if params[name].shape != grad.shape:
            raise ValueError(f"gradient shape mismatch for parameter {name!r}")
    adam.t += 1
    b1, b2 = adam.beta1, adam.beta2
    for name, grad in grads.items():
        if name not in adam.m:
            adam.m[name] = np.zeros_like(params[name])
            adam.v[name] = np.zeros_like(params[name])
        m, v = adam.m[name], adam.v[name]
        m *= b1
        m += (1.0 - b1) * grad
        v *= b2
        v += (1.0 - b2) * grad * grad
        m_hat = m / (1.0 - b1**adam.t)
        v_hat = v / (1.0 - b2**adam.t)
        params[name] -= adam.lr * m_hat / (np.sqrt(v_hat) + adam.eps)


def encoder_param_dict(enc: EncoderParams) -> dict[str, np.ndarray]:
    out = {"kernel": enc.kernel, "bias": enc.bias}
    if enc.finetune_embeddings:
        out["embedding"] = enc.embedding
    return out


def decoder_param_dict(dec: DecoderParams) -> dict[str, np.ndarray]:
    out = {"Q": dec.Q, "W": dec.W, "b": dec.b}
    if dec.mode != "none":
        out["fc_w"] = dec.fc_w
        out["fc_b"] = dec.fc_b
    return out
