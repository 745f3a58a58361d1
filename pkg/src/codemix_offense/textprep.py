"""Text preparation: truncation, transliteration and word-aligned subword tokenization."""
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import torch
from sklearn.base import BaseEstimator, TransformerMixin

logger = logging.getLogger(__name__)

MAX_CHARS = 300


def truncate(text: str, limit: int = MAX_CHARS) -> str:
    """Keep the first ``limit`` code points (spaces included)."""
    if limit < 1:
        raise ValueError(f"limit must be >= 1, got {limit}")
    return text if len(text) <= limit else text[:limit]


def split_words(text: str):
    return text.split()


# --------------------------------------------------------------------------
# transliteration


class TransliterationError(RuntimeError):
    def __init__(self, message, text):
        super().__init__(message)
        self.text = text


class IdentityEngine:
    name = "identity"

    def __call__(self, text):
        return text


class SanscriptEngine:
    """Romanizer backed by the ``indic_transliteration`` package.

    Each native-script run is converted with the scheme of its script; Latin
    text and other characters pass through untouched.
    """

    name = "sanscript"
    _SCRIPTS = {
        "KANNADA": (0x0C80, 0x0CFF),
        "TAMIL": (0x0B80, 0x0BFF),
        "MALAYALAM": (0x0D00, 0x0D7F),
    }

    def __init__(self, target="ITRANS"):
        try:
            from indic_transliteration import sanscript
        except ImportError as exc:  # pragma: no cover - exercised only without the extra
            raise TransliterationError("indic_transliteration is not installed (pip install codemix-offense[translit])", "") from exc
        self._sanscript = sanscript
        self.target = getattr(sanscript, target)

    def _script_of(self, ch):
        cp = ord(ch)
        for name, (lo, hi) in self._SCRIPTS.items():
            if lo <= cp <= hi:
                return name
        return None

    def __call__(self, text):
        out = []
        run, run_script = [], None
        for ch in text:
            script = self._script_of(ch)
            if script != run_script and run:
                out.append(self._flush(run, run_script))
                run = []
            run.append(ch)
            run_script = script
        if run:
            out.append(self._flush(run, run_script))
        return "".join(out)

    def _flush(self, chars, script):
        chunk = "".join(chars)
        if script is None:
            return chunk
        src = getattr(self._sanscript, script)
        return self._sanscript.transliterate(chunk, src, self.target)


class IndicTransEngine:
    """Adapter for the ``indictrans`` transliterator (native script -> Roman)."""

    name = "indictrans"
    _ISO = {"Kannada": "kan", "Tamil": "tam", "Malayalam": "mal"}

    def __init__(self, language):
        try:
            from indictrans import Transliterator
        except ImportError as exc:
            raise TransliterationError("indictrans is not installed", "") from exc
        self._trn = Transliterator(source=self._ISO[language], target="eng", build_lookup=True)

    def __call__(self, text):
        return self._trn.transform(text)


ENGINES = {"identity": IdentityEngine, "sanscript": SanscriptEngine, "indictrans": IndicTransEngine}


@dataclass
class TransliterationPolicy:
    mode: str = "as_is"
    engine: Optional[object] = None
    fallback_to_identity: bool = False

    def __post_init__(self):
        self.mode = self.mode.replace("-", "_")
        if self.mode not in ("as_is", "romanized"):
            raise ValueError(f"unknown input mode {self.mode!r}; expected 'as_is' or 'romanized'")
        if self.engine is None:
            self.engine = IdentityEngine() if self.mode == "as_is" else SanscriptEngine()


def make_engine(name, language="Kannada"):
    if name == "indictrans":
        return IndicTransEngine(language)
    return ENGINES[name]()


def transliterate(text: str, policy: TransliterationPolicy) -> str:
    if policy.mode == "as_is":
        return text
    try:
        return policy.engine(text)
    except Exception as exc:
        if policy.fallback_to_identity:
            logger.warning("transliteration failed (%s); keeping original text %r", exc, text)
            return text
        raise TransliterationError(f"{getattr(policy.engine, 'name', policy.engine)} failed: {exc}", text) from exc


class TextPreprocessor(TransformerMixin, BaseEstimator):
    """Truncate then (optionally) romanize raw texts.

    ``audit_`` holds ``(original, transformed)`` pairs from the last transform.
    """

    def __init__(self, input_mode="as-is", engine="sanscript", language="Kannada", max_chars=MAX_CHARS,
                 fallback_to_identity=False):
        self.input_mode = input_mode
        self.engine = engine
        self.language = language
        self.max_chars = max_chars
        self.fallback_to_identity = fallback_to_identity

    def fit(self, X, y=None):
        mode = self.input_mode.replace("-", "_")
        engine = IdentityEngine() if mode == "as_is" else make_engine(self.engine, self.language)
        self.policy_ = TransliterationPolicy(mode, engine, self.fallback_to_identity)
        return self

    def transform(self, X):
        if not hasattr(self, "policy_"):
            self.fit(X)
        out, audit = [], []
        for text in X:
            new = transliterate(truncate(text, self.max_chars), self.policy_)
            out.append(new)
            audit.append((text, new))
        self.audit_ = audit
        return out


# --------------------------------------------------------------------------
# character vocabulary


@dataclass
class CharVocab:
    char_to_id: dict = field(default_factory=dict)

    PAD = 0
    UNK = 1

    @classmethod
    def from_texts(cls, texts, min_freq=1):
        counts = Counter(ch for text in texts for ch in text if not ch.isspace())
        chars = sorted(ch for ch, n in counts.items() if n >= min_freq)
        return cls({ch: i + 2 for i, ch in enumerate(chars)})

    def __len__(self):
        return len(self.char_to_id) + 2

    def encode(self, word):
        return [self.char_to_id.get(ch, self.UNK) for ch in word]

    def to_json(self):
        return json.dumps({"pad": self.PAD, "unk": self.UNK, "chars": self.char_to_id}, ensure_ascii=False, sort_keys=True)

    @classmethod
    def from_json(cls, payload):
        return cls(dict(json.loads(payload)["chars"]))

    def save(self, path):
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path):
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


# --------------------------------------------------------------------------
# subword tokenizers


class SubwordTokenizer:
    """Greedy longest-match subword tokenizer over a fixed vocabulary.

    ``style="wordpiece"`` marks non-initial pieces with ``##`` and uses
    ``[CLS]``/``[SEP]`` markers; ``style="sentencepiece"`` marks word-initial
    pieces with ``▁`` and uses ``<s>``/``</s>``.
    """

    STYLES = {
        "wordpiece": {"cls": "[CLS]", "sep": "[SEP]", "pad": "[PAD]", "unk": "[UNK]", "mask": "[MASK]"},
        "sentencepiece": {"cls": "<s>", "sep": "</s>", "pad": "<pad>", "unk": "<unk>", "mask": "<mask>"},
    }

    def __init__(self, vocab, style="wordpiece"):
        if style not in self.STYLES:
            raise ValueError(f"unknown tokenizer style {style!r}")
        self.style = style
        self.markers = dict(self.STYLES[style])
        vocab = list(vocab)
        for tok in self.markers.values():
            if tok not in vocab:
                raise ValueError(f"vocabulary lacks marker {tok!r}")
        if len(set(vocab)) != len(vocab):
            raise ValueError("duplicate entries in vocabulary")
        self.vocab = vocab
        self.token_to_id = {t: i for i, t in enumerate(vocab)}
        self._max_piece = max(len(t) for t in vocab)
        for role, tok in self.markers.items():
            setattr(self, f"{role}_id", self.token_to_id[tok])

    @property
    def vocab_size(self):
        return len(self.vocab)

    @property
    def special_ids(self):
        return frozenset(self.token_to_id[t] for t in self.markers.values())

    def _pieces(self, word):
        if self.style == "wordpiece":
            return word, "", "##"
        return "▁" + word, "", ""

    def tokenize_word(self, word):
        text, first_prefix, cont_prefix = self._pieces(word)
        ids, start = [], 0
        while start < len(text):
            prefix = first_prefix if start == 0 else cont_prefix
            end = min(len(text), start + self._max_piece)
            found = None
            while end > start:
                tok_id = self.token_to_id.get(prefix + text[start:end])
                if tok_id is not None:
                    found = tok_id
                    break
                end -= 1
            if found is None:
                return [self.unk_id]
            ids.append(found)
            start = end
        return ids

    def convert_ids_to_tokens(self, ids):
        return [self.vocab[i] for i in ids]

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "vocab.txt").write_text("\n".join(self.vocab) + "\n", encoding="utf-8")
        meta = {"style": self.style, "markers": self.markers}
        (directory / "tokenizer.json").write_text(json.dumps(meta, indent=2, ensure_ascii=False), encoding="utf-8")

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        vocab = (directory / "vocab.txt").read_text(encoding="utf-8").split("\n")
        if vocab and vocab[-1] == "":
            vocab.pop()
        meta = json.loads((directory / "tokenizer.json").read_text(encoding="utf-8"))
        return cls(vocab, style=meta["style"])

    @classmethod
    def train(cls, texts, style="wordpiece", min_word_freq=2, max_words=4000):
        """Build a small deterministic vocabulary: markers, frequent whole words, single characters."""
        markers = list(cls.STYLES[style].values())
        words = Counter(w for t in texts for w in split_words(t))
        chars = sorted({ch for w in words for ch in w})
        frequent = sorted((w for w, n in words.items() if n >= min_word_freq), key=lambda w: (-words[w], w))[:max_words]
        if style == "wordpiece":
            entries = frequent + chars + ["##" + c for c in chars]
        else:
            # frequent in-word character pairs give this style its own segmentation
            pairs = Counter(w[i:i + 2] for w in words.elements() for i in range(1, len(w) - 1))
            common = sorted((p for p, n in pairs.items() if n >= min_word_freq), key=lambda p: (-pairs[p], p))
            entries = ["▁" + w for w in frequent] + ["▁" + c for c in chars] + common[:max_words] + chars
        vocab = list(markers)
        seen = set(vocab)
        for tok in entries:
            if tok not in seen:
                vocab.append(tok)
                seen.add(tok)
        return cls(vocab, style=style)


class HFTokenizer:
    """Wraps a ``transformers`` tokenizer so words are tokenized one at a time."""

    def __init__(self, tokenizer):
        self.tok = tokenizer
        self.cls_id = tokenizer.cls_token_id
        self.sep_id = tokenizer.sep_token_id
        self.pad_id = tokenizer.pad_token_id
        self.unk_id = tokenizer.unk_token_id
        self.mask_id = tokenizer.mask_token_id
        self.special_ids = frozenset(tokenizer.all_special_ids)
        self.vocab_size = len(tokenizer)

    def tokenize_word(self, word):
        return self.tok(word, add_special_tokens=False)["input_ids"]

    def convert_ids_to_tokens(self, ids):
        return self.tok.convert_ids_to_tokens(ids)

    def save(self, directory):
        self.tok.save_pretrained(directory)

    @classmethod
    def load(cls, directory):
        from transformers import AutoTokenizer

        return cls(AutoTokenizer.from_pretrained(directory))


# --------------------------------------------------------------------------
# alignment


@dataclass(frozen=True)
class WordAlignment:
    words: tuple
    spans: tuple  # (start, end) subtoken index ranges, end exclusive

    def __post_init__(self):
        if len(self.words) != len(self.spans):
            raise ValueError("one span per word required")
        prev = 1
        for start, end in self.spans:
            if start != prev or end <= start:
                raise ValueError(f"spans must be contiguous, ordered and non-empty: {self.spans}")
            prev = end


@dataclass(frozen=True)
class TokenizedExample:
    subtoken_ids: tuple
    alignment: WordAlignment
    char_ids: tuple  # one tuple of char ids per word


def tokenize_with_alignment(text, tokenizer, char_vocab) -> TokenizedExample:
    words = split_words(text)
    ids = [tokenizer.cls_id]
    spans, chars = [], []
    for word in words:
        pieces = tokenizer.tokenize_word(word)
        if not pieces:
            logger.info("word %r produced no subtokens; using the unknown id", word)
            pieces = [tokenizer.unk_id]
        spans.append((len(ids), len(ids) + len(pieces)))
        ids.extend(pieces)
        chars.append(tuple(char_vocab.encode(word)))
    ids.append(tokenizer.sep_id)
    return TokenizedExample(tuple(ids), WordAlignment(tuple(words), tuple(spans)), tuple(chars))


@dataclass
class TokenizedBatch:
    """Padded tensors for a batch plus the per-example alignments.

    ``char_ids`` is ``(batch, max_words, max_chars)``; ``word_lengths`` counts
    real words per example and ``char_lengths`` real characters per word.
    """

    subtoken_ids: torch.Tensor
    attention_mask: torch.Tensor
    alignments: list
    char_ids: torch.Tensor
    word_lengths: torch.Tensor
    char_lengths: torch.Tensor

    def __len__(self):
        return self.subtoken_ids.shape[0]


def collate(examples, pad_id, pad_to=None, pad_words_to=None, pad_chars_to=None) -> TokenizedBatch:
    """Pad a list of ``TokenizedExample`` into a ``TokenizedBatch``.

    The ``pad_*`` arguments force larger padded sizes (never smaller).
    """
    if not examples:
        raise ValueError("cannot collate an empty batch")
    seq_len = max(len(ex.subtoken_ids) for ex in examples)
    n_words = max(max(len(ex.char_ids) for ex in examples), 1)
    n_chars = max([len(c) for ex in examples for c in ex.char_ids] + [1])
    seq_len = max(seq_len, pad_to or 0)
    n_words = max(n_words, pad_words_to or 0)
    n_chars = max(n_chars, pad_chars_to or 0)

    B = len(examples)
    ids = torch.full((B, seq_len), pad_id, dtype=torch.long)
    mask = torch.zeros((B, seq_len), dtype=torch.long)
    char_ids = torch.full((B, n_words, n_chars), CharVocab.PAD, dtype=torch.long)
    word_lengths = torch.zeros(B, dtype=torch.long)
    char_lengths = torch.zeros((B, n_words), dtype=torch.long)
    for b, ex in enumerate(examples):
        n = len(ex.subtoken_ids)
        ids[b, :n] = torch.tensor(ex.subtoken_ids, dtype=torch.long)
        mask[b, :n] = 1
        word_lengths[b] = len(ex.char_ids)
        for w, chars in enumerate(ex.char_ids):
            char_ids[b, w, : len(chars)] = torch.tensor(chars, dtype=torch.long)
            char_lengths[b, w] = len(chars)
    return TokenizedBatch(ids, mask, [ex.alignment for ex in examples], char_ids, word_lengths, char_lengths)
