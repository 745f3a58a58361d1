"""Task-adaptive masked-language-model pretraining of a backbone on the task's own text."""
import functools
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from sklearn.base import BaseEstimator
from torch.nn import functional as F

from .checkpoint import Checkpoint, text_fingerprint
from .backbones import TOY_STYLES, Backbone, build_backbone
from .textprep import MAX_CHARS, CharVocab, tokenize_with_alignment, truncate
from .training import BertAdam, TrainingError

logger = logging.getLogger(__name__)

MASK, RANDOM, KEEP = "mask", "random", "keep"
PRETRAINED_MLM_LR = 5e-5
TOY_MLM_LR = 1e-3
_EVAL_STREAM = 0x5EED


@dataclass(frozen=True)
class MaskingPlan:
    positions: tuple
    replacement: tuple  # MASK / RANDOM / KEEP per position
    labels: tuple  # original ids at the positions
    random_ids: tuple  # replacement id for RANDOM positions, -1 elsewhere

    def apply(self, subtoken_ids, mask_id):
        """Corrupted input ids and the label row (-100 outside the plan)."""
        ids = list(subtoken_ids)
        labels = [-100] * len(ids)
        for pos, how, orig, rnd in zip(self.positions, self.replacement, self.labels, self.random_ids):
            labels[pos] = orig
            if how == MASK:
                ids[pos] = mask_id
            elif how == RANDOM:
                ids[pos] = rnd
        return ids, labels


def selection_count(n_eligible, mask_rate):
    """round(rate * eligible), at least one."""
    return max(1, math.floor(mask_rate * n_eligible + 0.5))


@functools.lru_cache(maxsize=8)
def _random_candidates(vocab_size, special_ids):
    return np.array(sorted(set(range(vocab_size)) - special_ids), dtype=np.int64)


def sample_masks(subtoken_ids, mask_rate=0.15, rng=None, *, special_ids, vocab_size, strategy="bert"):
    """Choose positions to predict and how each one is corrupted.

    Positions are drawn uniformly without replacement among non-special ids.
    ``strategy="bert"`` corrupts 80% to the mask token, 10% to a random
    non-special token and leaves 10% unchanged; ``"mask"`` always masks.
    """
    if not 0.0 < mask_rate <= 1.0:
        raise ValueError(f"mask_rate must lie in (0, 1], got {mask_rate}")
    if strategy not in ("bert", "mask"):
        raise ValueError(f"unknown masking strategy {strategy!r}")
    rng = rng if rng is not None else np.random.default_rng()
    eligible = np.array([i for i, t in enumerate(subtoken_ids) if t not in special_ids], dtype=np.int64)
    if eligible.size == 0:
        raise ValueError("no maskable positions in sequence")
    k = selection_count(eligible.size, mask_rate)
    positions = np.sort(rng.choice(eligible, size=k, replace=False))
    if strategy == "mask":
        kinds = [MASK] * k
        random_ids = [-1] * k
    else:
        u = rng.random(k)
        kinds = [MASK if x < 0.8 else RANDOM if x < 0.9 else KEEP for x in u]
        candidates = _random_candidates(vocab_size, frozenset(special_ids))
        draws = rng.choice(candidates, size=k)
        random_ids = [int(d) if kind == RANDOM else -1 for d, kind in zip(draws, kinds)]
    return MaskingPlan(
        tuple(int(p) for p in positions),
        tuple(kinds),
        tuple(int(subtoken_ids[p]) for p in positions),
        tuple(random_ids),
    )


def mlm_loss(logits, labels):
    """Mean cross-entropy over labelled positions (label != -100).

    With no labelled positions the loss is an exact zero connected to the
    graph, so every gradient is zero.
    """
    V = logits.shape[-1]
    total = F.cross_entropy(logits.reshape(-1, V), labels.reshape(-1), ignore_index=-100, reduction="sum")
    n = int((labels != -100).sum())
    return total / max(n, 1), n


@dataclass
class MLMDatasetSpec:
    train_texts: list
    eval_texts: list

    @classmethod
    def from_splits(cls, train, dev, test):
        """Train on train + dev texts, evaluate on the test texts."""
        return cls(list(train.texts) + list(dev.texts), list(test.texts))


@dataclass
class MLMConfig:
    epochs: int = 5
    batch_size: int = 8
    seed: int = 0
    mask_rate: float = 0.15
    strategy: str = "bert"
    dynamic_masking: bool = True
    lr: float = 0.0  # 0: 5e-5 for pretrained backbones, 1e-3 for toy ones
    warmup_proportion: float = 0.1
    weight_decay: float = 0.01
    max_chars: int = MAX_CHARS

    def __post_init__(self):
        if not 0.0 < self.mask_rate <= 1.0:
            raise ValueError(f"mask_rate must lie in (0, 1], got {self.mask_rate}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.strategy not in ("bert", "mask"):
            raise ValueError(f"unknown masking strategy {self.strategy!r}")


@dataclass
class MLMReport:
    train_loss: list = field(default_factory=list)
    eval_loss: list = field(default_factory=list)
    eval_perplexity: list = field(default_factory=list)
    n_train: int = 0
    n_eval: int = 0

    def to_dict(self):
        return asdict(self)


def _encode(texts, tokenizer, max_chars):
    vocab = CharVocab()
    return [list(tokenize_with_alignment(truncate(t, max_chars), tokenizer, vocab).subtoken_ids) for t in texts]


def _plans(sequences, tokenizer, encoder, config, stream):
    specials = tokenizer.special_ids
    plans = []
    for i, ids in enumerate(sequences):
        rng = np.random.default_rng([config.seed, stream, i])
        try:
            plans.append(sample_masks(ids, config.mask_rate, rng, special_ids=specials, vocab_size=encoder.vocab_size,
                                      strategy=config.strategy))
        except ValueError:
            plans.append(None)  # nothing to mask (empty text)
    return plans


def _mlm_batches(sequences, plans, order, batch_size, tokenizer):
    for start in range(0, len(order), batch_size):
        idx = [i for i in order[start:start + batch_size] if plans[i] is not None]
        if not idx:
            continue
        T = max(len(sequences[i]) for i in idx)
        ids = torch.full((len(idx), T), tokenizer.pad_id, dtype=torch.long)
        labels = torch.full((len(idx), T), -100, dtype=torch.long)
        mask = torch.zeros((len(idx), T), dtype=torch.long)
        for b, i in enumerate(idx):
            corrupted, lab = plans[i].apply(sequences[i], tokenizer.mask_id)
            n = len(corrupted)
            ids[b, :n] = torch.tensor(corrupted)
            labels[b, :n] = torch.tensor(lab)
            mask[b, :n] = 1
        yield ids, mask, labels


@torch.no_grad()
def evaluate_mlm(encoder, sequences, plans, batch_size, tokenizer):
    """Token-weighted mean cross-entropy over every planned position."""
    encoder.eval()
    total, count = 0.0, 0
    for ids, mask, labels in _mlm_batches(sequences, plans, np.arange(len(sequences)), batch_size, tokenizer):
        loss, n = mlm_loss(encoder.mlm_logits(ids, mask), labels)
        total += loss.item() * n
        count += n
    if count == 0:
        raise TrainingError("evaluation texts contain no maskable positions")
    return total / count


def pretrain_mlm(backbone: Backbone, spec: MLMDatasetSpec, config: MLMConfig):
    """Continue MLM training of ``backbone`` in place; returns the :class:`MLMReport`.

    The eval plans are sampled once so per-epoch eval losses are comparable.
    Training plans are resampled every epoch unless ``dynamic_masking`` is off.
    """
    if not spec.train_texts:
        raise TrainingError("no training texts for MLM pretraining")
    if not spec.eval_texts:
        raise TrainingError("no evaluation texts for MLM pretraining")
    tokenizer, encoder = backbone.tokenizer, backbone.encoder
    train_seqs = _encode(spec.train_texts, tokenizer, config.max_chars)
    eval_seqs = _encode(spec.eval_texts, tokenizer, config.max_chars)
    eval_plans = _plans(eval_seqs, tokenizer, encoder, config, _EVAL_STREAM)

    steps = config.epochs * math.ceil(len(train_seqs) / config.batch_size)
    lr = config.lr or (TOY_MLM_LR if backbone.is_toy else PRETRAINED_MLM_LR)
    decay = [p for n, p in encoder.named_parameters() if p.ndim >= 2 and "norm" not in n.lower()]
    no_decay = [p for n, p in encoder.named_parameters() if not (p.ndim >= 2 and "norm" not in n.lower())]
    optimizer = BertAdam([{"params": decay, "weight_decay": config.weight_decay},
                          {"params": no_decay, "weight_decay": 0.0}],
                         lr=lr, warmup=config.warmup_proportion, t_total=steps)

    report = MLMReport(n_train=len(train_seqs), n_eval=len(eval_seqs))
    torch.manual_seed(config.seed)
    for epoch in range(1, config.epochs + 1):
        stream = epoch if config.dynamic_masking else 1
        plans = _plans(train_seqs, tokenizer, encoder, config, stream)
        order = np.random.default_rng([config.seed, epoch]).permutation(len(train_seqs))
        encoder.train()
        total, count = 0.0, 0
        for ids, mask, labels in _mlm_batches(train_seqs, plans, order, config.batch_size, tokenizer):
            loss, n = mlm_loss(encoder.mlm_logits(ids, mask), labels)
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite MLM loss {loss.item()} at epoch {epoch}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += loss.item() * n
            count += n
        report.train_loss.append(total / max(count, 1))
        eval_loss = evaluate_mlm(encoder, eval_seqs, eval_plans, config.batch_size, tokenizer)
        report.eval_loss.append(eval_loss)
        report.eval_perplexity.append(math.exp(eval_loss))
        logger.info("mlm epoch %d: train %.4f eval %.4f ppl %.2f", epoch, report.train_loss[-1], eval_loss,
                    report.eval_perplexity[-1])
    encoder.eval()
    return report


class MaskedLMPretrainer(BaseEstimator):
    """Estimator wrapper around :func:`pretrain_mlm`.

    ``fit(X, X_eval)`` trains on ``X`` (train + dev texts) and tracks the MLM
    loss on ``X_eval`` (test texts). ``backbone`` is a registered name or the
    directory of a saved backbone.
    """

    def __init__(self, backbone="toy-xlmr", epochs=5, batch_size=8, seed=0, mask_rate=0.15, strategy="bert",
                 dynamic_masking=True, lr=0.0, max_chars=MAX_CHARS, toy_options=None):
        self.backbone = backbone
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.mask_rate = mask_rate
        self.strategy = strategy
        self.dynamic_masking = dynamic_masking
        self.lr = lr
        self.max_chars = max_chars
        self.toy_options = toy_options

    def _config(self):
        return MLMConfig(epochs=self.epochs, batch_size=self.batch_size, seed=self.seed, mask_rate=self.mask_rate,
                         strategy=self.strategy, dynamic_masking=self.dynamic_masking, lr=self.lr,
                         max_chars=self.max_chars)

    def fit(self, X, X_eval=None, y=None):
        config = self._config()
        X = [truncate(t, self.max_chars) for t in X]
        if X_eval is None:
            raise ValueError("X_eval (held-out texts) is required")
        if isinstance(self.backbone, Backbone):
            backbone = self.backbone
        elif self.backbone in TOY_STYLES or self.backbone in ("mbert", "xlmr"):
            backbone = build_backbone(self.backbone, texts=X, seed=self.seed, **(self.toy_options or {}))
        else:
            backbone = Backbone.load(self.backbone)
        self.report_ = pretrain_mlm(backbone, MLMDatasetSpec(list(X), list(X_eval)), config)
        self.backbone_ = backbone
        self.config_ = config
        self.data_fingerprint_ = text_fingerprint(list(X) + ["\x00"] + list(X_eval))
        return self

    def save(self, directory):
        """Write the adapted backbone plus ``meta.json``; returns the :class:`Checkpoint`."""
        meta = {
            "kind": "backbone",
            "backbone": self.backbone_.name,
            "seed": self.seed,
            "epochs": self.epochs,
            "mask_rate": self.mask_rate,
            "strategy": self.strategy,
            "dynamic_masking": self.dynamic_masking,
            "data_fingerprint": self.data_fingerprint_,
            "report": self.report_.to_dict(),
        }
        self.backbone_.save(directory)
        return Checkpoint.write(directory, meta)

    def score(self, X):
        """Negative MLM loss on ``X`` with seeded masks."""
        tok, enc = self.backbone_.tokenizer, self.backbone_.encoder
        seqs = _encode(X, tok, self.max_chars)
        return -evaluate_mlm(enc, seqs, _plans(seqs, tok, enc, self.config_, _EVAL_STREAM), self.batch_size, tok)
