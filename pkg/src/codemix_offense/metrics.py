"""Accuracy, per-class precision/recall/F1 and weighted/macro averages from a confusion matrix."""
import json
from dataclasses import asdict, dataclass, field

import numpy as np


class MetricsError(ValueError):
    pass


@dataclass
class ClassScores:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class MetricsReport:
    accuracy: float
    per_class: dict  # label -> ClassScores
    weighted_f1: float
    macro_f1: float
    confusion: list  # rows = gold, columns = predicted, in schema order
    labels: list = field(default_factory=list)
    zero_division: list = field(default_factory=list)  # labels whose precision or recall hit 0/0

    @property
    def n_examples(self):
        return int(sum(sum(row) for row in self.confusion))

    def to_dict(self):
        d = asdict(self)
        d["per_class"] = {k: asdict(v) for k, v in self.per_class.items()}
        return d

    def to_json(self, indent=2):
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def from_dict(cls, payload):
        payload = dict(payload)
        payload["per_class"] = {k: ClassScores(**v) for k, v in payload["per_class"].items()}
        return cls(**payload)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def confusion_matrix(gold, pred, schema):
    index = {name: i for i, name in enumerate(schema)}
    n = len(schema)
    cm = np.zeros((n, n), dtype=np.int64)
    for g, p in zip(gold, pred):
        try:
            cm[index[g], index[p]] += 1
        except KeyError as exc:
            raise MetricsError(f"label {exc.args[0]!r} is not in the schema {tuple(schema)}") from None
    return cm


def _safe_div(num, den):
    return np.divide(num, den, out=np.zeros_like(num, dtype=np.float64), where=den != 0)


def compute_metrics(gold, pred, schema) -> MetricsReport:
    """Score predicted labels against gold labels.

    Any 0/0 precision, recall or F1 counts as 0; the affected labels are listed
    in ``zero_division``.
    """
    gold, pred, schema = list(gold), list(pred), list(schema)
    if len(gold) != len(pred):
        raise MetricsError(f"{len(gold)} gold labels but {len(pred)} predictions")
    if not gold:
        raise MetricsError("cannot score an empty prediction set")
    cm = confusion_matrix(gold, pred, schema)
    tp = np.diag(cm).astype(np.float64)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    precision = _safe_div(tp, predicted.astype(np.float64))
    recall = _safe_div(tp, support.astype(np.float64))
    f1 = _safe_div(2 * precision * recall, precision + recall)
    zero_div = [name for name, s, p in zip(schema, support, predicted) if s == 0 or p == 0]

    per_class = {
        name: ClassScores(float(precision[i]), float(recall[i]), float(f1[i]), int(support[i]))
        for i, name in enumerate(schema)
    }
    return MetricsReport(
        accuracy=float(tp.sum() / len(gold)),
        per_class=per_class,
        weighted_f1=float((support * f1).sum() / support.sum()),
        macro_f1=float(f1.mean()),
        confusion=cm.tolist(),
        labels=schema,
        zero_division=zero_div,
    )


def f1_acc(report: MetricsReport) -> str:
    """Percentages in the ``F1 / Acc`` table style, e.g. ``70.30 / 74.00``."""
    return f"{100 * report.weighted_f1:.2f} / {100 * report.accuracy:.2f}"


def format_report(report: MetricsReport):
    """Render a report as (text, json) strings."""
    width = max([len(name) for name in report.labels] + [12])
    lines = [f"{'':<{width}}  precision   recall   f1-score   support"]
    for name in report.labels:
        s = report.per_class[name]
        lines.append(f"{name:<{width}}  {100 * s.precision:9.2f} {100 * s.recall:8.2f} {100 * s.f1:10.2f} {s.support:9d}")
    n = report.n_examples
    lines.append("")
    lines.append(f"{'accuracy':<{width}}  {'':9} {'':8} {100 * report.accuracy:10.2f} {n:9d}")
    lines.append(f"{'macro avg':<{width}}  {'':9} {'':8} {100 * report.macro_f1:10.2f} {n:9d}")
    lines.append(f"{'weighted avg':<{width}}  {'':9} {'':8} {100 * report.weighted_f1:10.2f} {n:9d}")
    lines.append("")
    lines.append(f"F1 / Acc: {f1_acc(report)}")
    return "\n".join(lines) + "\n", report.to_json()
