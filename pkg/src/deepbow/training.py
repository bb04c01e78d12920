"""Losses, Adam, token-budget batching and the training loop."""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import model as M
from .metrics import UndefinedMetricError, neg_pr_auc, roc_auc
from .vocab import Vocabulary

log = logging.getLogger(__name__)

binary_cross_entropy = M.binary_cross_entropy
l2_norm = M.l2_norm


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class RelevanceExample:
    query: str
    product: str
    label: int


def read_dataset(path) -> list[RelevanceExample]:
    """Read ``query<TAB>product<TAB>label`` lines."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3 or parts[2] not in ("0", "1"):
                raise ValueError(f"{path}:{lineno}: expected 'query<TAB>product<TAB>0|1'")
            out.append(RelevanceExample(parts[0], parts[1], int(parts[2])))
    return out


def write_dataset(path, examples) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(f"{ex.query}\t{ex.product}\t{ex.label}\n")


@dataclass
class TrainConfig:
    lr: float = 2e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_tokens: int = 4096
    loss: str = "s"
    epochs: int = 10
    patience: int = 3
    seed: int = 0
    v_norm: float | None = None   # None: the full index space v + B
    use_norm: bool = True
    deterministic: bool = True

    def __post_init__(self):
        if self.loss not in M.LOSS_MODES:
            raise ValueError(f"loss must be one of {M.LOSS_MODES}")
        if min(self.lr, self.batch_tokens, self.epochs) <= 0 or self.patience < 0:
            raise ValueError("learning rate, batch budget and epoch cap must be positive")


# -- optimizer --------------------------------------------------------------

@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float = 1e-4, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """In-place bias-corrected Adam update over every tensor in ``params``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            bad = int((~np.isfinite(g)).sum())
            raise FloatingPointError(f"non-finite gradient in {name!r}: {bad} of {g.size} entries "
                                     f"at step {state.step + 1}")
    state.step += 1
    bc1 = 1.0 - beta1 ** state.step
    bc2 = 1.0 - beta2 ** state.step
    for name, g in grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(params[name])
            state.v[name] = np.zeros_like(params[name])
        m, v = state.m[name], state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        params[name] -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


# -- data -------------------------------------------------------------------

@dataclass
class Prepared:
    query: M.TextInputs
    product: M.TextInputs
    label: int

    @property
    def n_tokens(self) -> int:
        return self.query.n_tokens + self.product.n_tokens


def prepare(examples, vocab: Vocabulary, max_len: int = 128) -> tuple[list[Prepared], int]:
    """Segment examples; returns (prepared, skipped count) dropping empty sides."""
    cache: dict[str, M.TextInputs] = {}

    def get(text):
        if text not in cache:
            cache[text] = M.text_inputs(text, vocab, max_len)
        return cache[text]

    out, skipped = [], 0
    for ex in examples:
        q, p = get(ex.query), get(ex.product)
        if min(len(q.chars), len(q.words), len(p.chars), len(p.words)) == 0:
            skipped += 1
            continue
        out.append(Prepared(q, p, int(ex.label)))
    return out, skipped


def token_batches(items: list[Prepared], budget: int, rng: np.random.Generator) -> list[list[int]]:
    """Group examples of similar length so each batch holds about ``budget`` tokens.

    Examples are shuffled, sorted by length inside windows of roughly fifty
    batches, cut greedily at the budget, and the batch order is shuffled.
    """
    order = rng.permutation(len(items))
    lengths = np.array([items[i].n_tokens for i in order])
    per_batch = max(1, budget // max(1, int(lengths.mean()) if len(lengths) else 1))
    window = 50 * per_batch
    batches = []
    for start in range(0, len(order), window):
        chunk = order[start:start + window]
        chunk = chunk[np.argsort(lengths[start:start + window], kind="stable")]
        cur, cur_tokens = [], 0
        for i in chunk:
            n = items[i].n_tokens
            if cur and cur_tokens + n > budget:
                batches.append(cur)
                cur, cur_tokens = [], 0
            cur.append(int(i))
            cur_tokens += n
        if cur:
            batches.append(cur)
    return [batches[i] for i in rng.permutation(len(batches))]


def make_batches(items: list[Prepared], rows, n_tokens: int):
    sel = [items[i] for i in rows]
    return (M.Batch.from_inputs([x.query for x in sel], n_tokens),
            M.Batch.from_inputs([x.product for x in sel], n_tokens),
            np.array([x.label for x in sel], dtype=np.float64))


def loss_t(params, cfg: M.ModelConfig, items: list[Prepared], v_norm=None, use_norm=True):
    qb, pb, y = make_batches(items, range(len(items)), cfg.n_tokens)
    loss, grads, _ = M.loss_and_grads(params, cfg, qb, pb, y, "t", v_norm, use_norm)
    return loss, grads


def loss_s(params, cfg: M.ModelConfig, items: list[Prepared], v_norm=None, use_norm=True):
    qb, pb, y = make_batches(items, range(len(items)), cfg.n_tokens)
    loss, grads, _ = M.loss_and_grads(params, cfg, qb, pb, y, "s", v_norm, use_norm)
    return loss, grads


def dense_scores(params, cfg: M.ModelConfig, items: list[Prepared], mode: str, batch_size: int = 128):
    """Training-time relevance scores (no truncation) for evaluation."""
    out = np.empty(len(items))
    order = sorted(range(len(items)), key=lambda i: items[i].n_tokens)
    for start in range(0, len(order), batch_size):
        rows = order[start:start + batch_size]
        qb, pb, _ = make_batches(items, rows, cfg.n_tokens)
        qo = M.forward(params, cfg, qb)
        po = M.forward(params, cfg, pb)
        out[rows] = M.relevance_scores(qo, po, mode)
    return out


# -- training loop ----------------------------------------------------------

@dataclass
class TrainResult:
    params: dict
    config: M.ModelConfig
    history: list[dict]
    best_epoch: int
    best_auc: float
    skipped: int = 0


def train(train_set, valid_set, vocab: Vocabulary, model_cfg: M.ModelConfig, cfg: TrainConfig,
          metrics_path=None, progress=None) -> TrainResult:
    """Train until validation ROC-AUC stops improving for ``patience`` epochs.

    Returns the parameters from the best validation epoch.
    """
    if not train_set or not valid_set:
        raise TrainingError("training and validation splits must both be non-empty")
    if model_cfg.n_tokens != vocab.size:
        raise TrainingError(f"model index space {model_cfg.n_tokens} != vocabulary size {vocab.size}")
    train_items, skip_t = prepare(train_set, vocab, model_cfg.max_len)
    valid_items, skip_v = prepare(valid_set, vocab, model_cfg.max_len)
    if skip_t or skip_v:
        log.warning("skipped %d train / %d valid examples with empty segmentation", skip_t, skip_v)
    if not train_items or not valid_items:
        raise TrainingError("no usable examples after segmentation")
    valid_labels = np.array([x.label for x in valid_items])

    params = M.init_params(model_cfg)
    state = AdamState()
    rng = np.random.default_rng(cfg.seed)
    history = []
    best = (-np.inf, 0, copy.deepcopy(params))
    stale = 0
    sink = open(metrics_path, "w", encoding="utf-8") if metrics_path else None
    try:
        for epoch in range(1, cfg.epochs + 1):
            losses = []
            for rows in token_batches(train_items, cfg.batch_tokens, rng):
                qb, pb, y = make_batches(train_items, rows, model_cfg.n_tokens)
                loss, grads, _ = M.loss_and_grads(params, model_cfg, qb, pb, y, cfg.loss, cfg.v_norm,
                                                  cfg.use_norm)
                if not np.isfinite(loss):
                    raise FloatingPointError(f"non-finite loss at epoch {epoch}")
                adam_step(params, grads, state, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
                losses.append(loss)
                if progress:
                    progress(epoch, state.step, loss)
            scores = dense_scores(params, model_cfg, valid_items, cfg.loss)
            try:
                auc = roc_auc(scores, valid_labels)
                npr = neg_pr_auc(scores, valid_labels)
            except UndefinedMetricError:
                auc, npr = float("nan"), float("nan")
            record = {"epoch": epoch, "loss": float(np.mean(losses)), "roc_auc": auc, "neg_pr_auc": npr,
                      "steps": state.step}
            history.append(record)
            log.info("epoch %d: loss %.4f roc_auc %.4f neg_pr_auc %.4f", epoch, record["loss"], auc, npr)
            if sink:
                sink.write(json.dumps(record) + "\n")
                sink.flush()
            if auc > best[0]:
                best = (auc, epoch, copy.deepcopy(params))
                stale = 0
            else:
                stale += 1
            if stale >= cfg.patience:
                break
    finally:
        if sink:
            sink.close()
    return TrainResult(best[2], model_cfg, history, best[1], float(best[0]), skip_t + skip_v)


def save_result(result: TrainResult, path, vocab: Vocabulary, train_cfg: TrainConfig) -> str:
    return M.save_checkpoint(path, result.params, result.config, vocab.digest,
                             {"train": asdict(train_cfg), "best_epoch": result.best_epoch,
                              "best_auc": result.best_auc})


def write_history(history, path) -> None:
    Path(path).write_text("".join(json.dumps(r) + "\n" for r in history), encoding="utf-8")
