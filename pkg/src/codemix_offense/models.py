"""Classifier architectures: CLS-token softmax head and the char/word BiLSTM fusion model."""
import logging
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

logger = logging.getLogger(__name__)

ARCHITECTURES = ("cls", "fusion", "charlstm")


class ConfigurationError(ValueError):
    pass


class AlignmentError(ValueError):
    pass


@dataclass
class FusionConfig:
    char_hidden: int = 128  # per direction
    word_hidden: int = 256  # per direction
    dropout: float = 0.40
    char_embedding: int = 50
    d_enc: int = 0  # 0 = take the width from the backbone

    def __post_init__(self):
        for name in ("char_hidden", "word_hidden", "char_embedding"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.d_enc < 0:
            raise ConfigurationError("d_enc must be non-negative")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError("dropout must lie in [0, 1)")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class PredictionRecord:
    id: str
    probs: tuple
    label: str


def records_from_probs(ids, probs, schema):
    probs = np.asarray(probs, dtype=np.float64)
    # np.argmax returns the first maximum, i.e. ties go to schema order
    return [PredictionRecord(str(i), tuple(float(p) for p in row), schema[int(np.argmax(row))])
            for i, row in zip(ids, probs)]


def pool_subwords_to_words(subword_states, alignments, n_words=None):
    """Average each word's subtoken vectors.

    ``subword_states`` is ``(B, T, d)``; returns ``(B, W, d)`` with zero rows
    past each example's last word. Single-subtoken words get their vector back
    unchanged.
    """
    B, T, _ = subword_states.shape
    if len(alignments) != B:
        raise AlignmentError(f"{len(alignments)} alignments for a batch of {B}")
    W = max([len(a.spans) for a in alignments] + [n_words or 0, 1])
    weights = subword_states.new_zeros((B, W, T))
    for b, align in enumerate(alignments):
        for w, (start, end) in enumerate(align.spans):
            if start < 0 or end > T or end <= start:
                raise AlignmentError(f"span {(start, end)} out of range for sequence length {T}")
            weights[b, w, start:end] = 1.0 / (end - start)
    pooled = torch.bmm(weights, subword_states)
    # exact copy for one-subtoken words (the matmul may differ in the last ulp)
    for b, align in enumerate(alignments):
        for w, (start, end) in enumerate(align.spans):
            if end - start == 1:
                pooled[b, w] = subword_states[b, start]
    return pooled


class CharEncoder(nn.Module):
    """Character BiLSTM producing one vector per word: [forward final ; backward final]."""

    def __init__(self, n_chars, embedding_dim, hidden, dropout=0.0):
        super().__init__()
        self.embedding = nn.Embedding(n_chars, embedding_dim, padding_idx=0)
        self.lstm = nn.LSTM(embedding_dim, hidden, batch_first=True, bidirectional=True)
        self.dropout = nn.Dropout(dropout)
        self.hidden = hidden

    @property
    def output_size(self):
        return 2 * self.hidden

    def forward(self, char_ids, lengths):
        """``char_ids``: (N, C) padded char ids; ``lengths``: (N,) with every entry >= 1."""
        if char_ids.shape[0] == 0:
            return char_ids.new_zeros((0, self.output_size), dtype=self.embedding.weight.dtype)
        if int(lengths.min()) < 1:
            raise ValueError("every word needs at least one character")
        packed = pack_padded_sequence(self.embedding(char_ids), lengths.cpu(), batch_first=True, enforce_sorted=False)
        _, (h_n, _) = self.lstm(packed)
        return self.dropout(torch.cat([h_n[0], h_n[1]], dim=-1))


def encode_chars(char_encoder, char_ids_per_word):
    """Encode a list of per-word char-id sequences with ``char_encoder``."""
    if any(len(c) == 0 for c in char_ids_per_word):
        raise ValueError("empty character sequence")
    C = max((len(c) for c in char_ids_per_word), default=1)
    ids = torch.zeros((len(char_ids_per_word), C), dtype=torch.long)
    for i, chars in enumerate(char_ids_per_word):
        ids[i, : len(chars)] = torch.as_tensor(chars, dtype=torch.long)
    lengths = torch.tensor([len(c) for c in char_ids_per_word], dtype=torch.long)
    return char_encoder(ids, lengths)


class ClsClassifier(nn.Module):
    """Softmax layer over the final-layer vector at the start marker."""

    has_encoder = True

    def __init__(self, encoder, n_classes):
        super().__init__()
        self.encoder = encoder
        self.head = nn.Linear(encoder.hidden_size, n_classes)

    def forward(self, batch):
        states = self.encoder.encode(batch.subtoken_ids, batch.attention_mask)
        return self.head(states[:, 0])


class FusionClassifier(nn.Module):
    """Averaged subword vectors and char-BiLSTM vectors, fused by a word-level BiLSTM.

    The classifier reads the word BiLSTM output at each example's last word.
    With ``encoder=None`` it degenerates to a pure character/word recurrent
    model (the ``charlstm`` architecture).
    """

    def __init__(self, encoder, n_chars, n_classes, config: FusionConfig):
        super().__init__()
        self.encoder = encoder
        self.config = config
        d_enc = 0
        if encoder is not None:
            d_enc = encoder.hidden_size
            if config.d_enc and config.d_enc != d_enc:
                raise ConfigurationError(f"FusionConfig.d_enc={config.d_enc} but the backbone width is {d_enc}")
        self.d_enc = d_enc
        self.char_encoder = CharEncoder(n_chars, config.char_embedding, config.char_hidden, config.dropout)
        self.word_lstm = nn.LSTM(d_enc + 2 * config.char_hidden, config.word_hidden, batch_first=True, bidirectional=True)
        self.word_dropout = nn.Dropout(config.dropout)
        self.empty_text = nn.Parameter(torch.zeros(2 * config.word_hidden))
        self.head = nn.Linear(2 * config.word_hidden, n_classes)

    @property
    def has_encoder(self):
        return self.encoder is not None

    def word_features(self, batch):
        """Fused per-word inputs to the word BiLSTM, ``(B, W, d_enc + 2*char_hidden)``."""
        B, W, C = batch.char_ids.shape
        word_mask = torch.arange(W)[None, :] < batch.word_lengths[:, None]
        dtype = self.head.weight.dtype
        chars = torch.zeros((B, W, self.char_encoder.output_size), dtype=dtype)
        if word_mask.any():
            flat_ids = batch.char_ids[word_mask]
            flat_len = batch.char_lengths[word_mask]
            chars[word_mask] = self.char_encoder(flat_ids, flat_len)
        if self.encoder is None:
            return chars
        states = self.encoder.encode(batch.subtoken_ids, batch.attention_mask)
        pooled = pool_subwords_to_words(states, batch.alignments, n_words=W)[:, :W]
        return torch.cat([pooled, chars], dim=-1)

    def forward(self, batch):
        feats = self.word_features(batch)
        lengths = batch.word_lengths
        nonempty = lengths > 0
        out = self.empty_text.expand(feats.shape[0], -1).clone()
        if nonempty.any():
            packed = pack_padded_sequence(feats[nonempty], lengths[nonempty].cpu(), batch_first=True, enforce_sorted=False)
            seq, _ = pad_packed_sequence(self.word_lstm(packed)[0], batch_first=True)
            seq = self.word_dropout(seq)
            last = lengths[nonempty] - 1
            out[nonempty] = seq[torch.arange(seq.shape[0]), last]
        if not bool(nonempty.all()):
            logger.debug("%d example(s) without words used the empty-text vector", int((~nonempty).sum()))
        return self.head(out)


def build_classifier(architecture, n_classes, encoder=None, n_chars=None, fusion_config=None):
    if architecture not in ARCHITECTURES:
        raise ConfigurationError(f"unknown architecture {architecture!r}; expected one of {ARCHITECTURES}")
    if architecture == "cls":
        if encoder is None:
            raise ConfigurationError("the cls architecture needs an encoder")
        return ClsClassifier(encoder, n_classes)
    if n_chars is None:
        raise ConfigurationError(f"the {architecture} architecture needs a character vocabulary size")
    config = fusion_config or FusionConfig()
    return FusionClassifier(encoder if architecture == "fusion" else None, n_chars, n_classes, config)


@torch.no_grad()
def predict_proba(model, batch):
    was_training = model.training
    model.eval()
    try:
        return torch.softmax(model(batch).double(), dim=-1).numpy()
    finally:
        model.train(was_training)


def classify_cls(batch, encoder, head, ids, schema):
    """Records from the CLS architecture given a backbone encoder and an ``nn.Linear`` head."""
    if head.in_features != encoder.hidden_size:
        raise ConfigurationError(f"head expects width {head.in_features} but the backbone produces {encoder.hidden_size}")
    if head.out_features != len(schema):
        raise ConfigurationError(f"head has {head.out_features} outputs for a schema of {len(schema)} classes")
    was_training = encoder.training
    encoder.eval()
    try:
        with torch.no_grad():
            states = encoder.encode(batch.subtoken_ids, batch.attention_mask)
            probs = torch.softmax(head(states[:, 0]).double(), dim=-1).numpy()
    finally:
        encoder.train(was_training)
    return records_from_probs(ids, probs, schema)


def classify_fusion(batch, model: FusionClassifier, ids, schema):
    if model.head.out_features != len(schema):
        raise ConfigurationError(f"head has {model.head.out_features} outputs for a schema of {len(schema)} classes")
    return records_from_probs(ids, predict_proba(model, batch), schema)
