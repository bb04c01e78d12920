"""Small pre-norm transformer encoder with layer-aggregated pooling.

Everything works on padded batches: ``ids`` is ``(B, T)`` and ``mask`` is a
``(B, T)`` 0/1 array marking real tokens. Padded positions never influence
real positions (keys are masked out of attention and excluded from pooling),
and they receive exactly zero gradient.

Parameters live in a flat ``dict[str, ndarray]`` so the optimizer and the
checkpoint writer can treat every tensor uniformly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LN_EPS = 1e-5
_GELU_C = np.sqrt(2.0 / np.pi)
_NEG = -1e30


@dataclass(frozen=True)
class EncoderConfig:
    n_tokens: int
    d: int = 64
    layers: int = 2
    heads: int = 4
    ffn: int = 256
    max_len: int = 128

    def __post_init__(self):
        if self.d % self.heads:
            raise ValueError(f"heads={self.heads} must divide d={self.d}")
        if self.layers < 1 or self.n_tokens < 1:
            raise ValueError("need at least one layer and one token")


@dataclass
class EncodedText:
    token_outputs: np.ndarray      # (len, d), final layer
    pooled: np.ndarray             # (d,)
    per_layer_pooled: np.ndarray   # (L, d)


# -- initialisation ---------------------------------------------------------

def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_encoder(cfg: EncoderConfig, rng: np.random.Generator, prefix: str = "") -> dict[str, np.ndarray]:
    d, f = cfg.d, cfg.ffn
    p = {prefix + "emb": _uniform(rng, (cfg.n_tokens, d), 1)}
    for i in range(cfg.layers):
        k = f"{prefix}l{i}."
        p[k + "ln1_g"] = np.ones(d)
        p[k + "ln1_b"] = np.zeros(d)
        for name in ("wq", "wk", "wv", "wo"):
            p[k + name] = _uniform(rng, (d, d), d)
            p[k + "b" + name[1]] = np.zeros(d)
        p[k + "ln2_g"] = np.ones(d)
        p[k + "ln2_b"] = np.zeros(d)
        p[k + "w1"] = _uniform(rng, (d, f), d)
        p[k + "b1"] = np.zeros(f)
        p[k + "w2"] = _uniform(rng, (f, d), f)
        p[k + "b2"] = np.zeros(d)
    p[prefix + "wm"] = _uniform(rng, (d, d), d)
    p[prefix + "bm"] = np.zeros(d)
    p[prefix + "wagg"] = _uniform(rng, (cfg.layers * d, d), cfg.layers * d)
    p[prefix + "bagg"] = np.zeros(d)
    return p


def sinusoidal(max_len: int, d: int) -> np.ndarray:
    pos = np.arange(max_len)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


# -- primitives -------------------------------------------------------------

def _layer_norm(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(-1, keepdims=True) + LN_EPS)
    xhat = xc * rstd
    return xhat * g + b, (xhat, rstd)


def _layer_norm_back(dy, g, cache):
    xhat, rstd = cache
    dy2 = dy.reshape(-1, dy.shape[-1])
    dg = (dy2 * xhat.reshape(dy2.shape)).sum(0)
    db = dy2.sum(0)
    dxhat = dy * g
    dx = rstd * (dxhat - dxhat.mean(-1, keepdims=True) - xhat * (dxhat * xhat).mean(-1, keepdims=True))
    return dx, dg, db


def _gelu(x):
    t = np.tanh(_GELU_C * x * (1.0 + 0.044715 * x * x))
    return 0.5 * x * (1.0 + t), t


def _gelu_back(dy, x, t):
    dt = _GELU_C * (1.0 + 3 * 0.044715 * x * x) * (1.0 - t * t)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * dt)


def masked_softmax(logits, mask):
    z = np.where(mask > 0, logits, _NEG)
    z = z - z.max(-1, keepdims=True)
    e = np.exp(z) * (mask > 0)
    return e / e.sum(-1, keepdims=True)


def _linear_back(x, dy):
    """Weight and bias grads for y = x @ W + b over any leading batch dims."""
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    return x2.T @ dy2, dy2.sum(0)


# -- forward / backward -----------------------------------------------------

def forward(params: dict, cfg: EncoderConfig, ids: np.ndarray, mask: np.ndarray, prefix: str = ""):
    """Run the encoder on a padded batch.

    Returns ``(token_outputs, pooled, cache)`` where ``token_outputs`` is the
    final layer ``(B, T, d)`` and ``pooled`` is the aggregated ``(B, d)``.
    """
    ids = np.asarray(ids)
    mask = np.asarray(mask, dtype=np.float64)
    B, T = ids.shape
    if T > cfg.max_len:
        raise ValueError(f"sequence length {T} exceeds max_len {cfg.max_len}")
    valid = mask > 0
    if (ids[valid] < 0).any() or (ids[valid] >= cfg.n_tokens).any():
        raise ValueError(f"token index outside [0, {cfg.n_tokens})")
    lengths = mask.sum(1)
    if (lengths < 1).any():
        raise ValueError("empty sequence in batch")

    d, nh = cfg.d, cfg.heads
    dh = d // nh
    scale = 1.0 / np.sqrt(dh)
    p = params
    x = p[prefix + "emb"][np.where(valid, ids, 0)] + sinusoidal(T, d)[None]
    key_mask = mask[:, None, None, :]
    layer_out = [x]
    layers = []
    for i in range(cfg.layers):
        k = f"{prefix}l{i}."
        a, ln1 = _layer_norm(x, p[k + "ln1_g"], p[k + "ln1_b"])
        q = (a @ p[k + "wq"] + p[k + "bq"]).reshape(B, T, nh, dh).transpose(0, 2, 1, 3)
        kk = (a @ p[k + "wk"] + p[k + "bk"]).reshape(B, T, nh, dh).transpose(0, 2, 1, 3)
        vv = (a @ p[k + "wv"] + p[k + "bv"]).reshape(B, T, nh, dh).transpose(0, 2, 1, 3)
        att = masked_softmax(q @ kk.transpose(0, 1, 3, 2) * scale, key_mask)
        o = (att @ vv).transpose(0, 2, 1, 3).reshape(B, T, d)
        mid = x + o @ p[k + "wo"] + p[k + "bo"]
        f_in, ln2 = _layer_norm(mid, p[k + "ln2_g"], p[k + "ln2_b"])
        u = f_in @ p[k + "w1"] + p[k + "b1"]
        gu, tu = _gelu(u)
        x = mid + gu @ p[k + "w2"] + p[k + "b2"]
        layers.append((a, ln1, q, kk, vv, att, o, f_in, ln2, u, gu, tu))
        layer_out.append(x)

    means = [(h * mask[..., None]).sum(1) / lengths[:, None] for h in layer_out[1:]]
    per_layer = [m @ p[prefix + "wm"] + p[prefix + "bm"] for m in means]
    cat = np.concatenate(per_layer, axis=1)
    pooled = cat @ p[prefix + "wagg"] + p[prefix + "bagg"]
    cache = dict(ids=ids, mask=mask, lengths=lengths, layers=layers, means=means, cat=cat,
                 per_layer=per_layer, prefix=prefix, shape=(B, T))
    return x, pooled, cache


def backward(params: dict, cfg: EncoderConfig, cache: dict, d_tokens=None, d_pooled=None,
             grads: dict | None = None) -> dict:
    """Accumulate parameter gradients into ``grads`` (created if None).

    ``d_tokens`` is the upstream gradient of the final-layer token outputs,
    ``d_pooled`` that of the pooled vector; either may be None.
    """
    p = params
    prefix = cache["prefix"]
    B, T = cache["shape"]
    d, nh, L = cfg.d, cfg.heads, cfg.layers
    dh = d // nh
    scale = 1.0 / np.sqrt(dh)
    mask = cache["mask"]
    if grads is None:
        grads = {}

    def acc(name, g):
        key = prefix + name
        if key in grads:
            grads[key] += g
        else:
            grads[key] = g.copy() if isinstance(g, np.ndarray) else g

    d_layer = [np.zeros((B, T, d)) for _ in range(L)]
    if d_pooled is not None:
        gw, gb = _linear_back(cache["cat"], d_pooled)
        acc("wagg", gw)
        acc("bagg", gb)
        d_cat = d_pooled @ p[prefix + "wagg"].T
        wm_g = np.zeros((d, d))
        bm_g = np.zeros(d)
        for i in range(L):
            dpl = d_cat[:, i * d:(i + 1) * d]
            wm_g += cache["means"][i].T @ dpl
            bm_g += dpl.sum(0)
            dm = dpl @ p[prefix + "wm"].T
            d_layer[i] += mask[..., None] * (dm / cache["lengths"][:, None])[:, None, :]
        acc("wm", wm_g)
        acc("bm", bm_g)
    if d_tokens is not None:
        d_layer[L - 1] += d_tokens * mask[..., None]

    dx = np.zeros((B, T, d))
    for i in reversed(range(L)):
        k = f"l{i}."
        a, ln1, q, kk, vv, att, o, f_in, ln2, u, gu, tu = cache["layers"][i]
        dx = dx + d_layer[i]
        # feed-forward block
        gw, gb = _linear_back(gu, dx)
        acc(k + "w2", gw)
        acc(k + "b2", gb)
        du = _gelu_back(dx @ p[prefix + k + "w2"].T, u, tu)
        gw, gb = _linear_back(f_in, du)
        acc(k + "w1", gw)
        acc(k + "b1", gb)
        dmid_ln, gg, gbb = _layer_norm_back(du @ p[prefix + k + "w1"].T, p[prefix + k + "ln2_g"], ln2)
        acc(k + "ln2_g", gg)
        acc(k + "ln2_b", gbb)
        dmid = dx + dmid_ln
        # attention block
        gw, gb = _linear_back(o, dmid)
        acc(k + "wo", gw)
        acc(k + "bo", gb)
        do = (dmid @ p[prefix + k + "wo"].T).reshape(B, T, nh, dh).transpose(0, 2, 1, 3)
        datt = do @ vv.transpose(0, 1, 3, 2)
        dvv = att.transpose(0, 1, 3, 2) @ do
        ds = att * (datt - (datt * att).sum(-1, keepdims=True)) * scale
        dq = ds @ kk
        dkk = ds.transpose(0, 1, 3, 2) @ q
        da = np.zeros((B, T, d))
        for name, g in (("q", dq), ("k", dkk), ("v", dvv)):
            g = g.transpose(0, 2, 1, 3).reshape(B, T, d)
            gw, gb = _linear_back(a, g)
            acc(k + "w" + name, gw)
            acc(k + "b" + name, gb)
            da += g @ p[prefix + k + "w" + name].T
        dx_ln, gg, gbb = _layer_norm_back(da, p[prefix + k + "ln1_g"], ln1)
        acc(k + "ln1_g", gg)
        acc(k + "ln1_b", gbb)
        dx = dmid + dx_ln

    demb = np.zeros_like(p[prefix + "emb"])
    valid = mask > 0
    np.add.at(demb, cache["ids"][valid], dx[valid])
    acc("emb", demb)
    return grads


def encode(params: dict, cfg: EncoderConfig, tokens, prefix: str = "") -> EncodedText:
    """Encode one token sequence (a ``TokenSequence`` or an index array)."""
    ids = np.asarray(getattr(tokens, "tokens", tokens), dtype=np.int64).reshape(1, -1)
    if ids.shape[1] == 0:
        raise ValueError("cannot encode an empty token sequence")
    out, pooled, cache = forward(params, cfg, ids, np.ones(ids.shape), prefix)
    return EncodedText(out[0], pooled[0], np.stack([h[0] for h in cache["per_layer"]]))


def attention_pool(h_c: np.ndarray, H_w: np.ndarray) -> np.ndarray:
    """Softmax over positions of the unscaled dot product ``h_c . h_w^i``."""
    logits = np.asarray(H_w) @ np.asarray(h_c)
    z = np.exp(logits - logits.max())
    return z / z.sum()


def weighted_word_summary(weights: np.ndarray, H_w: np.ndarray) -> np.ndarray:
    weights = np.asarray(weights, dtype=np.float64)
    if abs(weights.sum() - 1.0) > 1e-6:
        raise ValueError("pool weights must sum to 1")
    return weights @ np.asarray(H_w)
