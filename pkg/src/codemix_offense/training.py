"""Fine-tuning loop, optimizer policy and best-on-dev model selection."""
import copy
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import torch
from torch.nn import functional as F

from .metrics import compute_metrics
from .textprep import collate

logger = logging.getLogger(__name__)

POLICIES = ("encoder_adam_with_warmup", "plain_adam")

# learning rates used when the caller leaves them unset
PRETRAINED_ENCODER_LR = 2e-5
TOY_ENCODER_LR = 5e-3
PLAIN_ADAM_LR = 1e-3


class TrainingError(RuntimeError):
    pass


def warmup_linear(progress, warmup=0.002):
    """Linear warmup to 1 over ``warmup`` of training, then linear decay to 0."""
    if progress < warmup:
        return progress / warmup
    return max((progress - 1.0) / (warmup - 1.0), 0.0)


class BertAdam(torch.optim.Optimizer):
    """Adam with decoupled weight decay, no bias correction and a warmup-linear schedule.

    ``t_total=-1`` keeps the learning rate constant. Gradients are clipped per
    parameter to ``max_grad_norm`` before the update.
    """

    def __init__(self, params, lr, warmup=-1, t_total=-1, b1=0.9, b2=0.999, e=1e-6, weight_decay=0.01,
                 max_grad_norm=1.0):
        if lr <= 0.0:
            raise ValueError(f"invalid learning rate {lr}")
        if not (0.0 <= warmup < 1.0 or warmup == -1):
            raise ValueError(f"invalid warmup {warmup}")
        defaults = dict(lr=lr, warmup=warmup, t_total=t_total, b1=b1, b2=b2, e=e, weight_decay=weight_decay,
                        max_grad_norm=max_grad_norm)
        super().__init__(params, defaults)

    @staticmethod
    def _schedule(group, step):
        if group["t_total"] == -1:
            return 1.0
        return warmup_linear(step / group["t_total"], group["warmup"] if group["warmup"] != -1 else 0.002)

    @torch.no_grad()
    def step(self, closure=None):
        loss = closure() if closure is not None else None
        for group in self.param_groups:
            for p in group["params"]:
                if p.grad is None:
                    continue
                grad = p.grad
                state = self.state[p]
                if not state:
                    state["step"] = 0
                    state["next_m"] = torch.zeros_like(p)
                    state["next_v"] = torch.zeros_like(p)
                next_m, next_v = state["next_m"], state["next_v"]
                if group["max_grad_norm"] > 0:
                    torch.nn.utils.clip_grad_norm_(p, group["max_grad_norm"])
                next_m.mul_(group["b1"]).add_(grad, alpha=1 - group["b1"])
                next_v.mul_(group["b2"]).addcmul_(grad, grad, value=1 - group["b2"])
                update = next_m / (next_v.sqrt() + group["e"])
                if group["weight_decay"] > 0.0:
                    update = update + group["weight_decay"] * p
                lr_scheduled = group["lr"] * self._schedule(group, state["step"])
                p.add_(update, alpha=-lr_scheduled)
                state["step"] += 1
        return loss


@dataclass
class TrainConfig:
    epochs: int = 5
    batch_size: int = 8
    seed: int = 0
    optimizer_policy: Optional[str] = None  # None: chosen from the model
    encoder_lr: Optional[float] = None  # None: 2e-5 for pretrained backbones, 5e-3 for toy ones
    plain_lr: float = PLAIN_ADAM_LR
    warmup_proportion: float = 0.1
    weight_decay: float = 0.01
    class_weighting: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.optimizer_policy is not None and self.optimizer_policy not in POLICIES:
            raise ValueError(f"unknown optimizer policy {self.optimizer_policy!r}; expected one of {POLICIES}")

    def to_dict(self):
        return asdict(self)


@dataclass
class RunRecord:
    epochs: list = field(default_factory=list)  # dicts: epoch, train_loss, dev_weighted_f1, dev_accuracy
    selected_epoch: int = 0
    checkpoint_path: Optional[str] = None

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, payload):
        return cls(**payload)


def select_best_epoch(scores):
    """1-based index of the highest score; ties go to the earliest epoch."""
    if not scores:
        raise ValueError("no epochs recorded")
    best = 0
    for i, s in enumerate(scores):
        if s > scores[best]:
            best = i
    return best + 1


def _has_encoder(model):
    return bool(getattr(model, "has_encoder", False))


def _decay_groups(model, weight_decay):
    decay, no_decay = [], []
    for name, p in model.named_parameters():
        if not p.requires_grad:
            continue
        (no_decay if p.ndim < 2 or "norm" in name.lower() or name.endswith("bias") else decay).append(p)
    groups = [{"params": decay, "weight_decay": weight_decay}, {"params": no_decay, "weight_decay": 0.0}]
    return [g for g in groups if g["params"]]


def select_optimizer(model, config: TrainConfig, total_steps=-1, toy_encoder=False):
    """BertAdam with warmup for models carrying an encoder, plain Adam otherwise."""
    policy = config.optimizer_policy or ("encoder_adam_with_warmup" if _has_encoder(model) else "plain_adam")
    if policy == "encoder_adam_with_warmup":
        lr = config.encoder_lr or (TOY_ENCODER_LR if toy_encoder else PRETRAINED_ENCODER_LR)
        return BertAdam(_decay_groups(model, config.weight_decay), lr=lr, warmup=config.warmup_proportion,
                        t_total=total_steps)
    return torch.optim.Adam(model.parameters(), lr=config.plain_lr)


def policy_name(optimizer):
    return "encoder_adam_with_warmup" if isinstance(optimizer, BertAdam) else "plain_adam"


def epoch_order(n, seed, epoch):
    return np.random.default_rng([seed, epoch]).permutation(n)


def batches(examples, labels, order, batch_size, pad_id):
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        yield collate([examples[i] for i in idx], pad_id), torch.tensor([labels[i] for i in idx], dtype=torch.long)


@torch.no_grad()
def predict_indices(model, examples, batch_size, pad_id):
    model.eval()
    probs = []
    for batch, _ in batches(examples, [0] * len(examples), np.arange(len(examples)), batch_size, pad_id):
        probs.append(torch.softmax(model(batch).double(), dim=-1).numpy())
    return np.concatenate(probs, axis=0)


def class_weights(labels, n_classes):
    counts = np.bincount(labels, minlength=n_classes).astype(np.float64)
    weights = np.where(counts > 0, len(labels) / (n_classes * np.maximum(counts, 1)), 0.0)
    return torch.tensor(weights, dtype=torch.float32)


def fit_model(model, train_examples, train_labels, dev_examples, dev_labels, schema, config: TrainConfig, pad_id,
              toy_encoder=False):
    """Run ``config.epochs`` epochs, scoring dev after each.

    Returns the state dict of the best epoch (dev weighted F1, earliest on
    ties) and the :class:`RunRecord`. Labels are schema indices.
    """
    if not train_examples:
        raise TrainingError("empty training split")
    if not dev_examples:
        raise TrainingError("empty dev split")
    steps_per_epoch = math.ceil(len(train_examples) / config.batch_size)
    optimizer = select_optimizer(model, config, steps_per_epoch * config.epochs, toy_encoder=toy_encoder)
    weight = class_weights(train_labels, len(schema)) if config.class_weighting else None
    record = RunRecord()
    best_state, best_score = None, None
    dev_gold = [schema[i] for i in dev_labels]
    for epoch in range(1, config.epochs + 1):
        model.train()
        total, seen = 0.0, 0
        for batch, y in batches(train_examples, train_labels, epoch_order(len(train_examples), config.seed, epoch),
                                config.batch_size, pad_id):
            logits = model(batch)
            loss = F.cross_entropy(logits, y, weight=None if weight is None else weight.to(logits.dtype))
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite loss {loss.item()} at epoch {epoch} after {seen} examples")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += loss.item() * len(y)
            seen += len(y)
        probs = predict_indices(model, dev_examples, config.batch_size, pad_id)
        report = compute_metrics(dev_gold, [schema[i] for i in probs.argmax(axis=1)], schema)
        record.epochs.append({"epoch": epoch, "train_loss": total / seen, "dev_weighted_f1": report.weighted_f1,
                              "dev_accuracy": report.accuracy})
        logger.info("epoch %d: train loss %.4f, dev F1 %.4f, acc %.4f", epoch, total / seen, report.weighted_f1,
                    report.accuracy)
        if best_score is None or report.weighted_f1 > best_score:
            best_score = report.weighted_f1
            best_state = copy.deepcopy(model.state_dict())
    record.selected_epoch = select_best_epoch([e["dev_weighted_f1"] for e in record.epochs])
    model.load_state_dict(best_state)
    model.eval()
    return best_state, record
