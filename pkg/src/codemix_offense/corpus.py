"""Loading of the shared-task TSV splits and class statistics."""
import hashlib
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

logger = logging.getLogger(__name__)

LANGUAGES = ("Kannada", "Tamil", "Malayalam")
SPLITS = ("train", "dev", "test")
LANGUAGE_CODES = {"kn": "Kannada", "ta": "Tamil", "ml": "Malayalam"}

# Reference statistics of the official release, used by the dataset audit.
SPLIT_SIZES = {
    "Kannada": {"train": 6217, "dev": 777, "test": 778},
    "Tamil": {"train": 35139, "dev": 4388, "test": 4392},
    "Malayalam": {"train": 16010, "dev": 1999, "test": 2001},
}
TRAIN_CLASS_COUNTS = {
    "Kannada": [1522, 3544, 487, 329, 123, 212],
    "Tamil": [1454, 25425, 2343, 2557, 454, 2906],
    "Malayalam": [1287, 14153, 239, 140, 0, 191],
}

_SHARED_LABELS = (
    "Not_offensive",
    "Offensive_Targeted_Insult_Individual",
    "Offensive_Targeted_Insult_Group",
    "Offensive_Targeted_Insult_Other",
    "Offensive_Untargeted",
)
# spellings found in the wild, mapped onto the canonical names
_LABEL_ALIASES = {
    "offensive_untargetede": "Offensive_Untargeted",
    "not_offensive": "Not_offensive",
}


class CorpusError(ValueError):
    pass


class ParseError(CorpusError):
    pass


class SchemaError(CorpusError):
    pass


def resolve_language(language: str) -> str:
    if language in LANGUAGES:
        return language
    key = language.strip()
    if key.lower() in LANGUAGE_CODES:
        return LANGUAGE_CODES[key.lower()]
    for name in LANGUAGES:
        if name.lower() == key.lower():
            return name
    raise CorpusError(f"unknown language {language!r}; expected one of {LANGUAGES} or {tuple(LANGUAGE_CODES)}")


def label_schema(language: str) -> tuple:
    """Ordered class names for a language. Order fixes the classifier output layout."""
    language = resolve_language(language)
    return (f"Not-{language}",) + _SHARED_LABELS


def canonical_label(raw: str, language: str) -> str:
    schema = label_schema(language)
    if raw in schema:
        return raw
    key = raw.strip().lower()
    for name in schema:
        if name.lower() == key:
            return name
    if key in _LABEL_ALIASES:
        return _LABEL_ALIASES[key]
    raise SchemaError(f"label {raw!r} is not in the {resolve_language(language)} schema {schema}")


@dataclass(frozen=True)
class LabeledExample:
    id: str
    text: str
    label: Optional[str] = None


@dataclass(frozen=True)
class DatasetSplit:
    language: str
    split: str
    examples: tuple

    def __len__(self):
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)

    @property
    def texts(self):
        return [ex.text for ex in self.examples]

    @property
    def labels(self):
        return [ex.label for ex in self.examples]

    @property
    def ids(self):
        return [ex.id for ex in self.examples]

    @property
    def is_labeled(self):
        return all(ex.label is not None for ex in self.examples)

    @property
    def schema(self):
        return label_schema(self.language)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for ex in self.examples:
            h.update(f"{ex.id}\t{ex.text}\t{ex.label or ''}\n".encode("utf-8"))
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class ClassDistribution:
    counts: dict = field(default_factory=dict)
    total: int = 0

    def to_dict(self):
        return {"counts": dict(self.counts), "total": self.total}


def _read_rows(path):
    with open(path, encoding="utf-8", newline="") as fh:
        content = fh.read()
    if content.startswith("\ufeff"):
        content = content[1:]
    lines = content.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    for lineno, line in enumerate(lines, start=1):
        if line.endswith("\r"):
            line = line[:-1]
        yield lineno, line.split("\t")


def _header_columns(fields):
    names = [f.strip().lower() for f in fields]
    if len(names) >= 2 and "text" in names and set(names) <= {"id", "text", "label"} and len(set(names)) == len(names):
        return names
    return None


def load_split(path, language, split) -> DatasetSplit:
    """Read a UTF-8 TSV split.

    Rows are ``text<TAB>label`` (or ``text`` alone for unlabeled test files).
    A header row naming ``id``/``text``/``label`` columns is honoured when
    present. Text is kept verbatim; ids default to ``<split>-<row_index>``.
    """
    language = resolve_language(language)
    if split not in SPLITS:
        raise CorpusError(f"unknown split {split!r}; expected one of {SPLITS}")
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)

    columns = None
    examples = []
    seen_ids = set()
    for lineno, fields in _read_rows(path):
        if columns is None:
            header = _header_columns(fields) if lineno == 1 else None
            if header is not None:
                columns = header
                continue
            if len(fields) not in (1, 2):
                raise ParseError(f"{path}:{lineno}: expected 1 or 2 tab-separated columns, got {len(fields)}")
            columns = ["text"] if len(fields) == 1 else ["text", "label"]
        if len(fields) != len(columns):
            raise ParseError(f"{path}:{lineno}: expected {len(columns)} tab-separated columns, got {len(fields)}")
        row = dict(zip(columns, fields))
        text = row["text"]
        if text.strip() == "":
            raise ParseError(f"{path}:{lineno}: missing text")
        label = row.get("label")
        if label is not None:
            if label.strip() == "":
                label = None
            else:
                try:
                    label = canonical_label(label, language)
                except SchemaError as exc:
                    raise SchemaError(f"{path}:{lineno}: {exc}") from None
        ex_id = row.get("id") or f"{split}-{len(examples)}"
        if ex_id in seen_ids:
            raise ParseError(f"{path}:{lineno}: duplicate id {ex_id!r}")
        seen_ids.add(ex_id)
        examples.append(LabeledExample(ex_id, text, label))

    if not examples:
        raise CorpusError(f"{path}: no examples")
    return DatasetSplit(language, split, tuple(examples))


def save_split(split: DatasetSplit, path, with_ids=False):
    """Write a split back to TSV. Texts holding tabs or newlines cannot be stored."""
    labeled = any(ex.label is not None for ex in split.examples)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = []
    if with_ids:
        rows.append("\t".join(["id", "text"] + (["label"] if labeled else [])))
    for ex in split.examples:
        if "\t" in ex.text or "\n" in ex.text:
            raise CorpusError(f"example {ex.id!r}: text contains a tab or newline and cannot be written as TSV")
        fields = ([ex.id] if with_ids else []) + [ex.text]
        if labeled:
            fields.append(ex.label or "")
        rows.append("\t".join(fields))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(rows) + "\n")


def make_split(texts, labels=None, language="Kannada", split="train", ids=None) -> DatasetSplit:
    """Build a split from in-memory texts, validating labels against the schema."""
    language = resolve_language(language)
    texts = list(texts)
    if labels is None:
        labels = [None] * len(texts)
    labels = list(labels)
    if len(labels) != len(texts):
        raise CorpusError(f"{len(texts)} texts but {len(labels)} labels")
    if ids is None:
        ids = [f"{split}-{i}" for i in range(len(texts))]
    ids = [str(i) for i in ids]
    if len(set(ids)) != len(ids):
        raise CorpusError("ids must be unique within a split")
    examples = tuple(
        LabeledExample(i, t, None if lab is None else canonical_label(lab, language))
        for i, t, lab in zip(ids, texts, labels)
    )
    return DatasetSplit(language, split, examples)


def class_distribution(split: DatasetSplit) -> ClassDistribution:
    schema = label_schema(split.language)
    counts = {name: 0 for name in schema}
    for ex in split.examples:
        if ex.label is None:
            raise CorpusError(f"example {ex.id!r} in {split.language}/{split.split} is unlabeled")
        counts[ex.label] += 1
    for name, n in counts.items():
        if n == 0:
            logger.warning("%s/%s: class %s has no examples", split.language, split.split, name)
    return ClassDistribution(counts, len(split.examples))


def default_split_path(root, language, split):
    """Layout used under a data root: ``<root>/<Language>/<split>.tsv``."""
    return Path(root) / resolve_language(language) / f"{split}.tsv"


def data_root(explicit=None):
    return explicit or os.environ.get("CODEMIX_OFFENSE_DATA")
