"""DeepBoW network: character and word encoders feeding the two BoW heads.

A batch of texts is encoded in one pass. For each text the network yields

* ``p``   attention weights over its word-stream tokens (term weighting),
* ``g``   the dense synonym-expansion vector over the full index space.

Losses pair rows of a query batch with rows of a product batch. Gradients
are hand-derived and checked against finite differences in the tests.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import encoder as enc
from .vocab import Vocabulary, segment_characters, word_stream

BCE_CLAMP = 1e-7
LOSS_MODES = ("t", "s")


@dataclass(frozen=True)
class ModelConfig:
    n_tokens: int
    d: int = 64
    layers: int = 2
    heads: int = 4
    ffn: int = 256
    max_len: int = 128
    use_char: bool = True
    use_word: bool = True
    seed: int = 0
    expansion_bias: float = -6.0   # initial head.bc: expansions start nearly off
    member_bias: float = 6.0       # initial head.bw: literal words start near weight 1

    def encoder(self) -> enc.EncoderConfig:
        return enc.EncoderConfig(self.n_tokens, self.d, self.layers, self.heads, self.ffn, self.max_len)


def init_params(cfg: ModelConfig) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(cfg.seed)
    ecfg = cfg.encoder()
    p = {}
    p.update(enc.init_encoder(ecfg, rng, "char."))
    p.update(enc.init_encoder(ecfg, rng, "word."))
    d, n = cfg.d, cfg.n_tokens
    p["head.wc"] = rng.uniform(-1, 1, (d, n)) / np.sqrt(d)
    p["head.bc"] = np.full(n, cfg.expansion_bias)
    p["head.ww"] = rng.uniform(-1, 1, (2 * d, n)) / np.sqrt(2 * d)
    p["head.bw"] = np.full(n, cfg.member_bias)
    p["head.wg"] = rng.uniform(-1, 1, (2 * d, 1)) / np.sqrt(2 * d)
    p["head.bg"] = np.zeros(1)
    return p


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# -- batching ---------------------------------------------------------------

@dataclass
class TextInputs:
    """Token streams for one text, truncated to the model's max length."""
    chars: np.ndarray
    words: np.ndarray
    surfaces: tuple[str, ...]

    @property
    def n_tokens(self) -> int:
        return len(self.chars) + len(self.words)


def text_inputs(text: str, vocab: Vocabulary, max_len: int = 128) -> TextInputs:
    chars = segment_characters(text, vocab)
    words = word_stream(text, vocab)
    return TextInputs(chars.tokens[:max_len], words.tokens[:max_len], words.surfaces[:max_len])


def pad(seqs) -> tuple[np.ndarray, np.ndarray]:
    width = max(len(s) for s in seqs)
    ids = np.zeros((len(seqs), width), dtype=np.int64)
    mask = np.zeros((len(seqs), width))
    for i, s in enumerate(seqs):
        ids[i, :len(s)] = s
        mask[i, :len(s)] = 1.0
    return ids, mask


@dataclass
class Batch:
    char_ids: np.ndarray
    char_mask: np.ndarray
    word_ids: np.ndarray
    word_mask: np.ndarray
    member: np.ndarray  # (B, N) 1.0 where the token is one of the text's words/n-grams

    @classmethod
    def from_inputs(cls, items: list[TextInputs], n_tokens: int) -> "Batch":
        if any(len(t.chars) == 0 or len(t.words) == 0 for t in items):
            raise ValueError("empty segmentation in batch")
        ci, cm = pad([t.chars for t in items])
        wi, wm = pad([t.words for t in items])
        member = np.zeros((len(items), n_tokens))
        for r, t in enumerate(items):
            member[r, t.words] = 1.0
        return cls(ci, cm, wi, wm, member)

    def __len__(self):
        return len(self.char_ids)


# -- forward / backward -----------------------------------------------------

def forward(params: dict, cfg: ModelConfig, batch: Batch) -> dict:
    ecfg = cfg.encoder()
    out = {"batch": batch}
    Hw, hw, wcache = (None, None, None)
    if cfg.use_word:
        Hw, hw, wcache = enc.forward(params, ecfg, batch.word_ids, batch.word_mask, "word.")
    else:
        T = batch.word_ids.shape[1]
        Hw = params["word.emb"][batch.word_ids] + enc.sinusoidal(T, cfg.d)[None]
    if cfg.use_char:
        _, hc, ccache = enc.forward(params, ecfg, batch.char_ids, batch.char_mask, "char.")
    else:
        if hw is None:
            raise ValueError("at least one of the character and word encoders must be enabled")
        hc, ccache = hw, None
    wmask = batch.word_mask
    p = enc.masked_softmax(np.einsum("bd,btd->bt", hc, Hw), wmask)
    ht = np.einsum("bt,btd->bd", p, Hw)
    z = np.concatenate([hc, ht], axis=1)
    vc = sigmoid(hc @ params["head.wc"] + params["head.bc"])
    vw = sigmoid(z @ params["head.ww"] + params["head.bw"])
    pg = sigmoid(z @ params["head.wg"] + params["head.bg"])  # (B, 1)
    s = batch.member
    g = vc + s * (pg * vc + (1.0 - pg) * vw - vc)
    out.update(hc=hc, hw=hw, Hw=Hw, p=p, ht=ht, z=z, vc=vc, vw=vw, pg=pg, g=g,
               wcache=wcache, ccache=ccache)
    return out


def backward(params: dict, cfg: ModelConfig, out: dict, dg=None, dp=None, grads=None) -> dict:
    """Backprop upstream grads on ``g`` (B, N) and ``p`` (B, Tw) into parameters."""
    grads = {} if grads is None else grads
    batch = out["batch"]
    B = len(batch)
    hc, Hw, p, z, vc, vw, pg = (out[k] for k in ("hc", "Hw", "p", "z", "vc", "vw", "pg"))
    d = cfg.d
    dg = np.zeros_like(out["g"]) if dg is None else dg
    dp = np.zeros_like(p) if dp is None else dp.copy()

    s = batch.member
    dvc = dg * (1.0 - s * (1.0 - pg))
    dvw = dg * s * (1.0 - pg)
    dpg = (dg * s * (vc - vw)).sum(1, keepdims=True)
    dac = dvc * vc * (1.0 - vc)
    daw = dvw * vw * (1.0 - vw)
    dag = dpg * pg * (1.0 - pg)

    def acc(name, val):
        grads[name] = grads[name] + val if name in grads else val

    acc("head.wc", hc.T @ dac)
    acc("head.bc", dac.sum(0))
    acc("head.ww", z.T @ daw)
    acc("head.bw", daw.sum(0))
    acc("head.wg", z.T @ dag)
    acc("head.bg", dag.sum(0))
    dhc = dac @ params["head.wc"].T
    dz = daw @ params["head.ww"].T + dag @ params["head.wg"].T
    dhc += dz[:, :d]
    dht = dz[:, d:]

    dp += np.einsum("bd,btd->bt", dht, Hw)
    dHw = p[..., None] * dht[:, None, :]
    dlogit = p * (dp - (dp * p).sum(1, keepdims=True))
    dhc += np.einsum("bt,btd->bd", dlogit, Hw)
    dHw += dlogit[..., None] * hc[:, None, :]

    ecfg = cfg.encoder()
    if cfg.use_word:
        d_hw_pooled = None
        if not cfg.use_char:
            d_hw_pooled = dhc
        enc.backward(params, ecfg, out["wcache"], d_tokens=dHw, d_pooled=d_hw_pooled, grads=grads)
    else:
        demb = np.zeros_like(params["word.emb"])
        valid = batch.word_mask > 0
        np.add.at(demb, batch.word_ids[valid], dHw[valid])
        acc("word.emb", demb)
    if cfg.use_char:
        enc.backward(params, ecfg, out["ccache"], d_pooled=dhc, grads=grads)
    for name, val in params.items():
        if name not in grads:
            grads[name] = np.zeros_like(val)
    return grads


# -- losses -----------------------------------------------------------------

def binary_cross_entropy(p, label):
    """Clamped BCE on a probability; returns (loss, dloss/dp)."""
    p = np.asarray(p, dtype=np.float64)
    label = np.asarray(label, dtype=np.float64)
    ph = np.clip(p, BCE_CLAMP, 1.0 - BCE_CLAMP)
    loss = -(label * np.log(ph) + (1.0 - label) * np.log(1.0 - ph))
    inside = (p > BCE_CLAMP) & (p < 1.0 - BCE_CLAMP)
    grad = np.where(inside, -label / ph + (1.0 - label) / (1.0 - ph), 0.0)
    return loss, grad


def l2_norm(dense) -> float:
    dense = np.asarray(dense, dtype=np.float64)
    return float(np.sqrt(np.dot(dense.ravel(), dense.ravel())))


def _gather_query_tokens(qb: Batch):
    """Per-row query word-stream tokens, padded, plus mask."""
    return qb.word_ids, qb.word_mask


def relevance_scores(qout: dict, pout: dict, mode: str) -> np.ndarray:
    """Dense training-time scores: R_t for mode 't', R_s for mode 's'."""
    gD = pout["g"]
    if mode == "t":
        ids, mask = _gather_query_tokens(qout["batch"])
        gathered = np.take_along_axis(gD, ids, axis=1)
        return (qout["p"] * gathered * mask).sum(1)
    gQ = qout["g"]
    c = gQ.sum(1)
    # a query whose expansion underflows to zero mass is degenerate and scores 0
    return np.where(c > 0, (gQ * gD).sum(1) / np.where(c > 0, c, 1.0), 0.0)


def loss_and_grads(params: dict, cfg: ModelConfig, qbatch: Batch, pbatch: Batch, labels,
                   mode: str = "s", v_norm: float | None = None, use_norm: bool = True):
    """Mean per-example loss over the batch and its parameter gradients.

    mode 't': BCE(R_t) + norm(g_D)/v_norm, query as term-weighting BoW.
    mode 's': BCE(R_s) + BCE(R_avg) + norm(g_D)/v_norm, query as expansion BoW.
    """
    if mode not in LOSS_MODES:
        raise ValueError(f"loss mode must be one of {LOSS_MODES}")
    labels = np.asarray(labels, dtype=np.float64)
    E = len(labels)
    v_norm = float(cfg.n_tokens if v_norm is None else v_norm)
    qout = forward(params, cfg, qbatch)
    pout = forward(params, cfg, pbatch)
    gD, gQ = pout["g"], qout["g"]
    ids, mask = _gather_query_tokens(qbatch)
    rows = np.repeat(np.arange(E), ids.shape[1]).reshape(E, -1)
    dgD = np.zeros_like(gD)
    dgQ = np.zeros_like(gQ)
    dpQ = np.zeros_like(qout["p"])
    parts = {}

    if mode == "t":
        gathered = np.take_along_axis(gD, ids, axis=1)
        r = (qout["p"] * gathered * mask).sum(1)
        ce, dr = binary_cross_entropy(r, labels)
        dr = dr / E
        dpQ += dr[:, None] * gathered * mask
        np.add.at(dgD, (rows[mask > 0], ids[mask > 0]), (dr[:, None] * qout["p"] * mask)[mask > 0])
        total = ce
        parts["ce"] = ce
    else:
        live = gQ.sum(1) > 0
        c = np.where(live, gQ.sum(1), 1.0)
        dot = (gQ * gD).sum(1)
        r = np.where(live, dot / c, 0.0)
        ce_s, dr = binary_cross_entropy(r, labels)
        dr = dr * live / E
        dgQ += dr[:, None] * (gD / c[:, None] - (dot / c ** 2)[:, None])
        dgD += dr[:, None] * gQ / c[:, None]
        n = mask.sum(1)
        gathered = np.take_along_axis(gD, ids, axis=1)
        r_avg = (gathered * mask).sum(1) / n
        ce_a, dra = binary_cross_entropy(r_avg, labels)
        dra = dra / E
        np.add.at(dgD, (rows[mask > 0], ids[mask > 0]), ((dra / n)[:, None] * mask)[mask > 0])
        total = ce_s + ce_a
        parts["ce"] = ce_s
        parts["ce_avg"] = ce_a

    if use_norm:
        norms = np.sqrt((gD * gD).sum(1))
        total = total + norms / v_norm
        safe = np.where(norms > 0, norms, 1.0)
        dgD += (gD / (safe * v_norm * E)[:, None]) * (norms > 0)[:, None]
        parts["norm"] = norms

    grads = backward(params, cfg, pout, dg=dgD)
    backward(params, cfg, qout, dg=dgQ, dp=dpQ, grads=grads)
    return float(total.mean()), grads, {"scores": r, "parts": parts, "q": qout, "d": pout}


# -- checkpoints ------------------------------------------------------------

CKPT_MAGIC = b"DBWCKPT1"


def save_checkpoint(path, params: dict, cfg: ModelConfig, vocab_digest: str = "", extra: dict | None = None) -> str:
    data = checkpoint_bytes(params, cfg, vocab_digest, extra)
    with open(path, "wb") as fh:
        fh.write(data)
    return hashlib.sha256(data).hexdigest()


def checkpoint_bytes(params: dict, cfg: ModelConfig, vocab_digest: str = "", extra: dict | None = None) -> bytes:
    names = sorted(params)
    header = {
        "config": asdict(cfg),
        "vocab_hash": vocab_digest,
        "tensors": [{"name": n, "shape": list(params[n].shape)} for n in names],
        "extra": extra or {},
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(CKPT_MAGIC)
    buf.write(len(head).to_bytes(8, "little"))
    buf.write(head)
    for n in names:
        buf.write(np.ascontiguousarray(params[n], dtype="<f8").tobytes())
    return buf.getvalue()


@dataclass
class Checkpoint:
    params: dict
    config: ModelConfig
    vocab_hash: str
    extra: dict = field(default_factory=dict)
    digest: str = ""


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a DeepBoW checkpoint")
    hlen = int.from_bytes(data[8:16], "little")
    header = json.loads(data[16:16 + hlen].decode("utf-8"))
    off = 16 + hlen
    params = {}
    for t in header["tensors"]:
        count = int(np.prod(t["shape"], dtype=np.int64))
        end = off + 8 * count
        if end > len(data):
            raise ValueError(f"{path}: truncated tensor {t['name']} at offset {off}")
        params[t["name"]] = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(t["shape"]).copy()
        off = end
    if off != len(data):
        raise ValueError(f"{path}: {len(data) - off} trailing bytes after tensors")
    return Checkpoint(params, ModelConfig(**header["config"]), header["vocab_hash"], header.get("extra", {}),
                      hashlib.sha256(data).hexdigest())
