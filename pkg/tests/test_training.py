import numpy as np
import pytest
import torch
from torch import nn

from codemix_offense.corpus import label_schema
from codemix_offense.estimator import OffensiveLanguageClassifier
from codemix_offense.models import FusionConfig, build_classifier
from codemix_offense.textprep import tokenize_with_alignment
from codemix_offense.training import (
    BertAdam,
    TrainConfig,
    TrainingError,
    fit_model,
    select_best_epoch,
    select_optimizer,
    warmup_linear,
)

SCHEMA = list(label_schema("kn"))
SMALL = dict(char_hidden=16, word_hidden=16, char_embedding=16)


def overfit_data():
    cues = ["alpha", "bravo", "charlie", "delta"]
    X = [f"{cues[i % 4]} word{i % 3} {cues[i % 4]}x" for i in range(16)]
    y = [SCHEMA[i % 4] for i in range(16)]
    return X, y


def test_best_epoch_ties_go_earliest():
    assert select_best_epoch([0.61, 0.64, 0.64, 0.63, 0.60]) == 2
    assert select_best_epoch([0.5]) == 1
    with pytest.raises(ValueError):
        select_best_epoch([])


def test_warmup_linear_schedule():
    assert warmup_linear(0.0, 0.1) == 0.0
    assert warmup_linear(0.05, 0.1) == pytest.approx(0.5)
    assert warmup_linear(0.1, 0.1) == pytest.approx(1.0)
    assert warmup_linear(0.55, 0.1) == pytest.approx(0.5)
    assert warmup_linear(1.0, 0.1) == 0.0


def test_bert_adam_decays_weights_only_when_asked():
    w = nn.Parameter(torch.ones(3))
    opt = BertAdam([{"params": [w], "weight_decay": 0.5}], lr=0.1)
    w.grad = torch.zeros(3)
    opt.step()
    assert torch.allclose(w.detach(), torch.full((3,), 0.95))
    with pytest.raises(ValueError):
        BertAdam([w], lr=0.0)


def test_optimizer_policies(fixture_tokenizer, char_vocab):
    from codemix_offense.backbones import ToyEncoder, ToyEncoderConfig

    enc = ToyEncoder(ToyEncoderConfig(vocab_size=fixture_tokenizer.vocab_size, hidden_size=8, num_heads=2,
                                      ff_size=16, pad_id=fixture_tokenizer.pad_id))
    config = TrainConfig()
    cls = build_classifier("cls", 6, enc)
    fusion = build_classifier("fusion", 6, enc, len(char_vocab), FusionConfig(**SMALL))
    charlstm = build_classifier("charlstm", 6, None, len(char_vocab), FusionConfig(**SMALL))
    assert isinstance(select_optimizer(cls, config, 10), BertAdam)
    assert isinstance(select_optimizer(fusion, config, 10), BertAdam)
    plain = select_optimizer(charlstm, config, 10)
    assert type(plain) is torch.optim.Adam
    assert plain.param_groups[0]["lr"] == 1e-3
    assert select_optimizer(cls, config, 10).param_groups[0]["lr"] == 2e-5


def test_five_epochs_recorded_and_best_restored(kn_splits):
    train, dev = kn_splits["train"], kn_splits["dev"]
    est = OffensiveLanguageClassifier("kn", "cls", "toy-mbert", epochs=5, seed=1)
    est.fit(train.texts, train.labels, dev.texts, dev.labels)
    record = est.run_record_
    assert [e["epoch"] for e in record.epochs] == [1, 2, 3, 4, 5]
    scores = [e["dev_weighted_f1"] for e in record.epochs]
    assert record.selected_epoch == select_best_epoch(scores)
    from codemix_offense.metrics import compute_metrics

    assert compute_metrics(dev.labels, est.predict(dev.texts), SCHEMA).weighted_f1 == pytest.approx(
        scores[record.selected_epoch - 1])


@pytest.mark.parametrize("architecture", ["cls", "fusion", "charlstm"])
def test_same_seed_same_weights(architecture):
    X, y = overfit_data()
    a = OffensiveLanguageClassifier(architecture=architecture, epochs=2, seed=3, **SMALL).fit(X, y)
    b = OffensiveLanguageClassifier(architecture=architecture, epochs=2, seed=3, **SMALL).fit(X, y)
    sa, sb = a.model_.state_dict(), b.model_.state_dict()
    assert all(torch.equal(sa[k], sb[k]) for k in sa)
    c = OffensiveLanguageClassifier(architecture=architecture, epochs=2, seed=4, **SMALL).fit(X, y)
    assert not np.array_equal(a.predict_proba(X), c.predict_proba(X))


@pytest.mark.parametrize("architecture", ["cls", "fusion"])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_overfit_sixteen_examples(architecture, seed):
    X, y = overfit_data()
    est = OffensiveLanguageClassifier(architecture=architecture, backbone="toy-xlmr", seed=seed, **SMALL).fit(X, y)
    assert (est.predict(X) == np.array(y)).mean() == 1.0


def test_estimator_reports_policy():
    X, y = overfit_data()
    assert OffensiveLanguageClassifier(architecture="charlstm", epochs=1, **SMALL).fit(X, y).optimizer_policy_ == \
        "plain_adam"
    assert OffensiveLanguageClassifier(architecture="cls", epochs=1).fit(X, y).optimizer_policy_ == \
        "encoder_adam_with_warmup"


def test_non_finite_loss_aborts(fixture_tokenizer, char_vocab):
    model = build_classifier("charlstm", 6, None, len(char_vocab), FusionConfig(**SMALL))
    with torch.no_grad():
        model.head.bias.fill_(float("nan"))
    exs = [tokenize_with_alignment("ab cd", fixture_tokenizer, char_vocab)] * 2
    with pytest.raises(TrainingError, match="non-finite"):
        fit_model(model, exs, [0, 1], exs, [0, 1], SCHEMA, TrainConfig(epochs=1), fixture_tokenizer.pad_id)


def test_empty_splits_rejected(fixture_tokenizer, char_vocab):
    model = build_classifier("charlstm", 6, None, len(char_vocab), FusionConfig(**SMALL))
    exs = [tokenize_with_alignment("ab", fixture_tokenizer, char_vocab)]
    with pytest.raises(TrainingError, match="training"):
        fit_model(model, [], [], exs, [0], SCHEMA, TrainConfig(), fixture_tokenizer.pad_id)
    with pytest.raises(TrainingError, match="dev"):
        fit_model(model, exs, [0], [], [], SCHEMA, TrainConfig(), fixture_tokenizer.pad_id)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(optimizer_policy="sgd")
