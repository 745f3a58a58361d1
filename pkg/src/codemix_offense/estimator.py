"""scikit-learn style classifier over the CLS, fusion and char-BiLSTM architectures."""
import json
import logging
from pathlib import Path

import numpy as np
import torch
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_consistent_length, check_is_fitted

from .backbones import BACKBONES, TOY_STYLES, Backbone, build_backbone
from .checkpoint import Checkpoint, config_fingerprint, directory_identity, relative_to, text_fingerprint
from .corpus import canonical_label, label_schema, resolve_language
from .models import ARCHITECTURES, FusionConfig, build_classifier, records_from_probs
from .textprep import MAX_CHARS, CharVocab, SubwordTokenizer, TextPreprocessor, tokenize_with_alignment
from .training import RunRecord, TrainConfig, fit_model, policy_name, predict_indices, select_optimizer

logger = logging.getLogger(__name__)

WEIGHTS_FILE = "weights.pt"


def check_texts(X, name="X"):
    """Validate a sequence of raw texts and return it as a list of ``str``."""
    if isinstance(X, str):
        raise TypeError(f"{name} must be a sequence of texts, not a single string")
    if hasattr(X, "ndim") and getattr(X, "ndim") != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {getattr(X, 'shape', None)}")
    texts = list(X)
    for i, t in enumerate(texts):
        if not isinstance(t, str):
            raise TypeError(f"{name}[{i}] is {type(t).__name__}, expected str")
    return texts


class OffensiveLanguageClassifier(ClassifierMixin, BaseEstimator):
    """Offensive-language classifier for one language's label schema.

    ``architecture`` is ``"cls"`` (softmax over the start-marker vector),
    ``"fusion"`` (averaged subword vectors + char BiLSTM -> word BiLSTM) or
    ``"charlstm"`` (the fusion model without an encoder). ``backbone`` is a
    registered name (``mbert``, ``xlmr``, ``toy-mbert``, ``toy-xlmr``) and
    ``from_checkpoint`` optionally points at an MLM-adapted backbone directory.

    ``fit`` accepts ``X_dev``/``y_dev`` for best-epoch selection; without them
    the training data doubles as the selection set.
    """

    def __init__(self, language="Kannada", architecture="cls", backbone="toy-xlmr", from_checkpoint=None,
                 input_mode="as-is", transliterator="sanscript", max_chars=MAX_CHARS, epochs=5, batch_size=8,
                 seed=0, optimizer_policy=None, encoder_lr=None, plain_lr=1e-3, warmup_proportion=0.1,
                 class_weighting=False, char_hidden=128, word_hidden=256, char_embedding=50, dropout=0.40,
                 toy_options=None):
        self.language = language
        self.architecture = architecture
        self.backbone = backbone
        self.from_checkpoint = from_checkpoint
        self.input_mode = input_mode
        self.transliterator = transliterator
        self.max_chars = max_chars
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.optimizer_policy = optimizer_policy
        self.encoder_lr = encoder_lr
        self.plain_lr = plain_lr
        self.warmup_proportion = warmup_proportion
        self.class_weighting = class_weighting
        self.char_hidden = char_hidden
        self.word_hidden = word_hidden
        self.char_embedding = char_embedding
        self.dropout = dropout
        self.toy_options = toy_options

    # -- configuration -----------------------------------------------------

    def _train_config(self):
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size, seed=self.seed,
                           optimizer_policy=self.optimizer_policy, encoder_lr=self.encoder_lr,
                           plain_lr=self.plain_lr, warmup_proportion=self.warmup_proportion,
                           class_weighting=self.class_weighting)

    def _fusion_config(self):
        return FusionConfig(char_hidden=self.char_hidden, word_hidden=self.word_hidden, dropout=self.dropout,
                            char_embedding=self.char_embedding)

    def _validate_params(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture!r}; expected one of {ARCHITECTURES}")
        if self.backbone not in BACKBONES:
            raise ValueError(f"unknown backbone {self.backbone!r}; expected one of {BACKBONES}")
        resolve_language(self.language)

    def _preprocess(self, X):
        return self.preprocessor_.transform(X)

    def _tokenize(self, texts):
        return [tokenize_with_alignment(t, self.tokenizer_, self.char_vocab_) for t in texts]

    def _encode_labels(self, y):
        index = {name: i for i, name in enumerate(self.classes_)}
        return [index[canonical_label(str(lab), self.language)] for lab in y]

    @property
    def _pad_id(self):
        return self.tokenizer_.pad_id

    # -- fitting -----------------------------------------------------------

    def _init_backbone(self, texts):
        if self.from_checkpoint:
            backbone = Backbone.load(self.from_checkpoint)
            if backbone.name != self.backbone:
                logger.warning("checkpoint backbone %s overrides backbone=%s", backbone.name, self.backbone)
            return backbone
        return build_backbone(self.backbone, texts=texts, seed=self.seed, **(self.toy_options or {}))

    def fit(self, X, y, X_dev=None, y_dev=None):
        self._validate_params()
        X = check_texts(X)
        check_consistent_length(X, y)
        if not X:
            raise ValueError("cannot fit on an empty training set")
        if (X_dev is None) != (y_dev is None):
            raise ValueError("pass both X_dev and y_dev or neither")
        self.classes_ = np.array(label_schema(self.language))
        self.preprocessor_ = TextPreprocessor(self.input_mode, self.transliterator, resolve_language(self.language),
                                              self.max_chars).fit(X)
        train_texts = self._preprocess(X)
        train_labels = self._encode_labels(y)
        if X_dev is None:
            logger.info("no dev set given; selecting the best epoch on the training data")
            dev_texts, dev_labels = train_texts, train_labels
        else:
            X_dev = check_texts(X_dev, "X_dev")
            check_consistent_length(X_dev, y_dev)
            dev_texts, dev_labels = self._preprocess(X_dev), self._encode_labels(y_dev)

        torch.manual_seed(self.seed)
        backbone = self._init_backbone(train_texts) if self.architecture != "charlstm" else None
        if backbone is None:
            # the recurrent-only model still needs a subword tokenizer for batching
            self.tokenizer_ = SubwordTokenizer.train(train_texts, style="wordpiece")
            self.backbone_name_ = None
        else:
            self.tokenizer_ = backbone.tokenizer
            self.backbone_name_ = backbone.name
        self.backbone_ = backbone
        self.char_vocab_ = CharVocab.from_texts(train_texts)
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(self.seed)
            self.model_ = build_classifier(self.architecture, len(self.classes_),
                                           encoder=backbone.encoder if backbone else None,
                                           n_chars=len(self.char_vocab_), fusion_config=self._fusion_config())
        torch.manual_seed(self.seed)
        _, self.run_record_ = fit_model(
            self.model_, self._tokenize(train_texts), train_labels, self._tokenize(dev_texts), dev_labels,
            list(self.classes_), self._train_config(), self._pad_id,
            toy_encoder=backbone is not None and backbone.is_toy,
        )
        params = self.get_params()
        if self.from_checkpoint:
            params["from_checkpoint"] = directory_identity(self.from_checkpoint)
        self.fingerprint_ = {
            "train": text_fingerprint(X),
            "dev": text_fingerprint(X_dev) if X_dev is not None else None,
            "config": config_fingerprint(params),
        }
        return self

    @property
    def optimizer_policy_(self):
        check_is_fitted(self, "model_")
        return policy_name(select_optimizer(self.model_, self._train_config(), 1,
                                            toy_encoder=self.backbone_name_ in TOY_STYLES))

    # -- inference ---------------------------------------------------------

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        X = check_texts(X)
        if not X:
            return np.zeros((0, len(self.classes_)))
        return predict_indices(self.model_, self._tokenize(self._preprocess(X)), self.batch_size, self._pad_id)

    def predict(self, X):
        probs = self.predict_proba(X)
        return self.classes_[np.argmax(probs, axis=1)]

    def predict_records(self, X, ids=None):
        probs = self.predict_proba(X)
        ids = ids if ids is not None else [str(i) for i in range(len(probs))]
        return records_from_probs(ids, probs, list(self.classes_))

    # -- persistence -------------------------------------------------------

    def save(self, directory):
        """Persist model weights, vocabularies and ``meta.json``; returns the :class:`Checkpoint`."""
        check_is_fitted(self, "model_")
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        state = self.model_.state_dict()
        if self.backbone_ is not None:
            self.backbone_.save(directory / "backbone")
            state = {k: v for k, v in state.items() if not k.startswith("encoder.")}
        else:
            self.tokenizer_.save(directory / "tokenizer")
        torch.save(state, directory / WEIGHTS_FILE)
        self.char_vocab_.save(directory / "char_vocab.json")
        params = self.get_params()
        if self.from_checkpoint:
            params["from_checkpoint"] = relative_to(self.from_checkpoint, directory)
        meta = {
            "kind": "classifier",
            "architecture": self.architecture,
            "backbone": self.backbone_name_,
            "language": resolve_language(self.language),
            "label_schema": list(self.classes_),
            "fusion_config": self._fusion_config().to_dict(),
            "train_config": self._train_config().to_dict(),
            "params": params,
            "fingerprint": self.fingerprint_,
            "run_record": self.run_record_.to_dict(),
        }
        return Checkpoint.write(directory, meta)

    @classmethod
    def load(cls, directory):
        ckpt = Checkpoint.read(directory)
        if ckpt.kind != "classifier":
            raise ValueError(f"{directory} holds a {ckpt.kind!r} checkpoint, not a classifier")
        meta = ckpt.meta
        params = dict(meta["params"])
        params["from_checkpoint"] = None
        est = cls(**params)
        est.classes_ = np.array(meta["label_schema"])
        est.preprocessor_ = TextPreprocessor(est.input_mode, est.transliterator, meta["language"], est.max_chars).fit([])
        est.char_vocab_ = CharVocab.load(Path(directory) / "char_vocab.json")
        if meta["backbone"] is not None:
            est.backbone_ = Backbone.load(Path(directory) / "backbone")
            est.tokenizer_ = est.backbone_.tokenizer
        else:
            est.backbone_ = None
            est.tokenizer_ = SubwordTokenizer.load(Path(directory) / "tokenizer")
        est.backbone_name_ = meta["backbone"]
        est.model_ = build_classifier(meta["architecture"], len(est.classes_),
                                      encoder=est.backbone_.encoder if est.backbone_ else None,
                                      n_chars=len(est.char_vocab_), fusion_config=FusionConfig(**meta["fusion_config"]))
        state = torch.load(Path(directory) / WEIGHTS_FILE, weights_only=True)
        missing, unexpected = est.model_.load_state_dict(state, strict=False)
        if unexpected or any(not k.startswith("encoder.") for k in missing):
            raise ValueError(f"checkpoint weights do not match the model: missing={missing} unexpected={unexpected}")
        est.model_.eval()
        est.run_record_ = RunRecord.from_dict(meta["run_record"])
        est.fingerprint_ = meta["fingerprint"]
        return est


def train_classifier(spec, train, dev, config: TrainConfig, output_dir=None):
    """Fit a classifier on two :class:`DatasetSplit` objects.

    ``spec`` is a dict of estimator parameters (architecture, backbone, ...).
    Returns ``(estimator, checkpoint_or_None, run_record)``; the checkpoint is
    written only when ``output_dir`` is given.
    """
    if len(train) == 0:
        raise ValueError("empty training split")
    if train.schema != dev.schema:
        raise ValueError(f"train schema {train.schema} differs from dev schema {dev.schema}")
    if not train.is_labeled or not dev.is_labeled:
        raise ValueError("train and dev splits must be fully labeled")
    params = dict(spec)
    params.update(language=train.language, epochs=config.epochs, batch_size=config.batch_size, seed=config.seed,
                  optimizer_policy=config.optimizer_policy, encoder_lr=config.encoder_lr, plain_lr=config.plain_lr,
                  warmup_proportion=config.warmup_proportion, class_weighting=config.class_weighting)
    est = OffensiveLanguageClassifier(**params).fit(train.texts, train.labels, dev.texts, dev.labels)
    ckpt = None
    if output_dir is not None:
        ckpt = est.save(output_dir)
        est.run_record_.checkpoint_path = str(Path(output_dir))
        stored = dict(est.run_record_.to_dict(), checkpoint_path=".")  # relative to run_record.json
        (Path(output_dir) / "run_record.json").write_text(json.dumps(stored, indent=2) + "\n")
    return est, ckpt, est.run_record_
