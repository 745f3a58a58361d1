"""Hard-label majority voting over member classifiers."""
import json
import logging
from collections import Counter
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, clone
from sklearn.utils.validation import check_is_fitted

from .estimator import OffensiveLanguageClassifier, check_texts

logger = logging.getLogger(__name__)


class EnsembleError(RuntimeError):
    pass


@dataclass
class EnsembleSpec:
    members: list  # checkpoint directories
    seeds: list = field(default_factory=list)

    def __post_init__(self):
        if not self.members:
            raise EnsembleError("an ensemble needs at least one member")

    def to_dict(self):
        return {"members": [str(m) for m in self.members], "seeds": list(self.seeds)}


@dataclass(frozen=True)
class VoteResult:
    id: str
    member_labels: tuple
    final_label: str
    tie_broken: bool
    mean_probs: tuple
    vote_counts: dict

    def to_dict(self):
        return asdict(self)


def majority_vote(records, schema) -> VoteResult:
    """Mode of the members' labels for one example.

    Ties among the most-voted labels go to the highest mean probability; an
    exact tie there goes to the label listed first in ``schema``. Member order
    never matters.
    """
    if not records:
        raise EnsembleError("no member predictions to vote over")
    ids = {r.id for r in records}
    if len(ids) != 1:
        raise EnsembleError(f"members disagree on the example id: {sorted(ids)}")
    schema = list(schema)
    for r in records:
        if len(r.probs) != len(schema) or r.label not in schema:
            raise EnsembleError(f"member prediction {r!r} does not match the schema")
    counts = Counter(r.label for r in records)
    # exact rational sums: tie-breaks cannot depend on member order or rounding
    sums = [sum(map(Fraction, col)) for col in zip(*(r.probs for r in records))]
    top = max(counts.values())
    tied = [name for name in schema if counts.get(name, 0) == top]
    # schema-ordered scan with strict '>' keeps the first label on exact ties
    final = tied[0]
    for name in tied[1:]:
        if sums[schema.index(name)] > sums[schema.index(final)]:
            final = name
    return VoteResult(
        id=records[0].id,
        member_labels=tuple(r.label for r in records),
        final_label=final,
        tie_broken=len(tied) > 1,
        mean_probs=tuple(float(s / len(records)) for s in sums),
        vote_counts={name: counts.get(name, 0) for name in schema},
    )


def vote_all(member_records, schema):
    """Vote example-wise over ``member_records[m][i]`` (member m, example i)."""
    n = {len(recs) for recs in member_records}
    if len(n) != 1:
        raise EnsembleError(f"members produced different numbers of predictions: {sorted(n)}")
    return [majority_vote([recs[i] for recs in member_records], schema) for i in range(n.pop())]


def load_members(spec: EnsembleSpec):
    members = []
    for path in spec.members:
        try:
            members.append(OffensiveLanguageClassifier.load(path))
        except Exception as exc:
            raise EnsembleError(f"could not load ensemble member {path}: {exc}") from exc
    schemas = {tuple(m.classes_) for m in members}
    if len(schemas) != 1:
        raise EnsembleError("ensemble members use different label schemas")
    families = Counter((m.backbone_name_ or "none").replace("toy-", "") for m in members)
    if len(members) == 6 and families != Counter({"mbert": 3, "xlmr": 3}):
        logger.warning("six-member ensemble is not 3 mBERT + 3 XLM-R: %s", dict(families))
    return members


def ensemble_predict(spec: EnsembleSpec, dataset):
    members = load_members(spec)
    schema = list(members[0].classes_)
    member_records = []
    for path, member in zip(spec.members, members):
        try:
            member_records.append(member.predict_records(dataset.texts, ids=dataset.ids))
        except Exception as exc:
            raise EnsembleError(f"ensemble member {path} failed during inference: {exc}") from exc
    return vote_all(member_records, schema)


def write_predictions(results, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("id\tlabel\n")
        for r in results:
            fh.write(f"{r.id}\t{r.final_label}\n")


def read_predictions(path):
    """Inverse of :func:`write_predictions`: list of ``(id, label)``."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if header != ["id", "label"]:
            raise ValueError(f"{path}: expected an 'id<TAB>label' header, got {header}")
        for line in fh:
            line = line.rstrip("\n")
            if line:
                ex_id, label = line.split("\t")
                rows.append((ex_id, label))
    return rows


def write_audit(results, path, member_names=None):
    with open(path, "w", encoding="utf-8") as fh:
        for r in results:
            row = r.to_dict()
            if member_names is not None:
                row["members"] = [str(m) for m in member_names]
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


class MajorityVoteClassifier(ClassifierMixin, BaseEstimator):
    """Mode ensemble over a list of classifiers.

    ``estimators`` holds unfitted estimators (cloned and fitted by ``fit``) or,
    with ``prefit=True``, already fitted ones.
    """

    def __init__(self, estimators=None, prefit=False):
        self.estimators = estimators
        self.prefit = prefit

    @classmethod
    def from_checkpoints(cls, paths):
        spec = EnsembleSpec(list(paths))
        est = cls(estimators=load_members(spec), prefit=True)
        return est._set_fitted(est.estimators)

    def _set_fitted(self, members):
        schemas = {tuple(m.classes_) for m in members}
        if len(schemas) != 1:
            raise EnsembleError("ensemble members use different label schemas")
        self.estimators_ = list(members)
        self.classes_ = np.array(schemas.pop())
        return self

    def fit(self, X, y, X_dev=None, y_dev=None):
        if not self.estimators:
            raise EnsembleError("an ensemble needs at least one member")
        if self.prefit:
            return self._set_fitted(self.estimators)
        fitted = [clone(e).fit(X, y, X_dev, y_dev) for e in self.estimators]
        return self._set_fitted(fitted)

    def vote(self, X, ids=None):
        check_is_fitted(self, "estimators_")
        X = check_texts(X)
        ids = ids if ids is not None else [str(i) for i in range(len(X))]
        member_records = [m.predict_records(X, ids=ids) for m in self.estimators_]
        return vote_all(member_records, list(self.classes_))

    def predict(self, X):
        return np.array([r.final_label for r in self.vote(X)])

    def predict_proba(self, X):
        """Mean member probabilities (the votes themselves are in :meth:`vote`)."""
        return np.array([r.mean_probs for r in self.vote(X)])
