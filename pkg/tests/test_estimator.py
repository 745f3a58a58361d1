import numpy as np
import pytest
import torch
from sklearn.base import clone

from codemix_offense.backbones import Backbone, HFEncoder
from codemix_offense.estimator import OffensiveLanguageClassifier, check_texts, train_classifier
from codemix_offense.textprep import HFTokenizer, tokenize_with_alignment
from codemix_offense.training import TrainConfig

SMALL = dict(char_hidden=8, word_hidden=8, char_embedding=8)


def test_check_texts():
    assert check_texts(("a", "b")) == ["a", "b"]
    with pytest.raises(TypeError):
        check_texts("abc")
    with pytest.raises(TypeError):
        check_texts(["a", 3])
    with pytest.raises(ValueError):
        check_texts(np.array([["a"]]))


def test_params_and_clone():
    est = OffensiveLanguageClassifier(language="ta", architecture="fusion", seed=7)
    params = est.get_params()
    assert params["architecture"] == "fusion" and params["seed"] == 7
    assert clone(est).get_params() == params


def test_invalid_params_raise_on_fit():
    with pytest.raises(ValueError, match="architecture"):
        OffensiveLanguageClassifier(architecture="svm").fit(["a"], ["Not_offensive"])
    with pytest.raises(ValueError, match="backbone"):
        OffensiveLanguageClassifier(backbone="gpt").fit(["a"], ["Not_offensive"])
    with pytest.raises(ValueError):
        OffensiveLanguageClassifier().fit(["a", "b"], ["Not_offensive"])


def test_predict_before_fit():
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        OffensiveLanguageClassifier().predict(["a"])


@pytest.mark.parametrize("architecture", ["cls", "fusion", "charlstm"])
def test_save_load_same_predictions(tmp_path, kn_splits, architecture):
    train, dev = kn_splits["train"], kn_splits["dev"]
    est, ckpt, record = train_classifier({"architecture": architecture, "backbone": "toy-mbert", **SMALL},
                                         train, dev, TrainConfig(epochs=2, seed=1), tmp_path / "m")
    assert ckpt.kind == "classifier"
    assert (tmp_path / "m" / "run_record.json").exists()
    again = OffensiveLanguageClassifier.load(tmp_path / "m")
    assert np.array_equal(est.predict_proba(dev.texts), again.predict_proba(dev.texts))
    assert list(again.classes_) == list(train.schema)
    assert est.score(dev.texts, dev.labels) == again.score(dev.texts, dev.labels)


def test_romanized_input_mode(kn_splits):
    train = kn_splits["train"]
    est = OffensiveLanguageClassifier("kn", input_mode="romanized", epochs=1).fit(train.texts, train.labels)
    assert all(a == b or any(0x0C80 <= ord(c) <= 0x0CFF for c in a) for a, b in est.preprocessor_.audit_)
    assert not any(0x0C80 <= ord(c) <= 0x0CFF for _, b in est.preprocessor_.audit_ for c in b)


def _tiny_hf_backbone(tmp_path, name):
    transformers = pytest.importorskip("transformers")
    words = ["movie", "super", "worst", "hero", "fans", "song", "bro", "##s", "##er", "s", "u", "p", "e", "r"]
    vocab = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"] + words
    (tmp_path / "vocab.txt").write_text("\n".join(vocab) + "\n")
    tok = transformers.BertTokenizer(str(tmp_path / "vocab.txt"), do_lower_case=False)
    config = transformers.BertConfig(vocab_size=len(vocab), hidden_size=16, num_hidden_layers=1,
                                     num_attention_heads=2, intermediate_size=32, max_position_embeddings=64)
    torch.manual_seed(0)
    return Backbone(name, HFEncoder(transformers.BertForMaskedLM(config)), HFTokenizer(tok))


def test_hf_adapter_alignment_and_training(tmp_path):
    backbone = _tiny_hf_backbone(tmp_path, "mbert")
    from codemix_offense.textprep import CharVocab

    ex = tokenize_with_alignment("supers movie", backbone.tokenizer, CharVocab.from_texts(["supers movie"]))
    assert ex.subtoken_ids[0] == backbone.tokenizer.cls_id and ex.subtoken_ids[-1] == backbone.tokenizer.sep_id
    assert ex.alignment.spans == ((1, 3), (3, 4))
    backbone.save(tmp_path / "bb")
    X = ["super movie", "worst hero", "fans song", "bro super"] * 2
    y = ["Not_offensive", "Offensive_Untargeted"] * 4
    est = OffensiveLanguageClassifier("kn", "fusion", "mbert", from_checkpoint=str(tmp_path / "bb"), epochs=1,
                                      **SMALL).fit(X, y)
    assert est.optimizer_policy_ == "encoder_adam_with_warmup"
    est.save(tmp_path / "clf")
    again = OffensiveLanguageClassifier.load(tmp_path / "clf")
    assert np.allclose(est.predict_proba(X), again.predict_proba(X))
