import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from codemix_offense.corpus import make_split
from codemix_offense.mlm import (
    KEEP,
    MASK,
    RANDOM,
    MaskedLMPretrainer,
    MLMConfig,
    MLMDatasetSpec,
    mlm_loss,
    sample_masks,
    selection_count,
)

SPECIAL = frozenset({0, 1, 2, 3, 4})
VOCAB = 50


def seq(n_content):
    return [2] + [5 + (i % 40) for i in range(n_content)] + [3]


def test_selection_count_examples():
    assert selection_count(100, 0.15) == 15
    assert selection_count(1, 0.15) == 1
    assert selection_count(10, 0.15) == 2  # 1.5 rounds half up
    assert len(sample_masks(seq(100), 0.15, np.random.default_rng(0), special_ids=SPECIAL,
                            vocab_size=VOCAB).positions) == 15
    assert len(sample_masks(seq(1), 0.15, np.random.default_rng(0), special_ids=SPECIAL,
                            vocab_size=VOCAB).positions) == 1


def test_monte_carlo_rate_and_split():
    rng = np.random.default_rng(2024)
    selected, eligible = 0, 0
    kinds = []
    for _ in range(10_000):
        n = int(rng.integers(5, 60))
        plan = sample_masks(seq(n), 0.15, rng, special_ids=SPECIAL, vocab_size=VOCAB)
        selected += len(plan.positions)
        eligible += n
        kinds.extend(plan.replacement)
    assert abs(selected / eligible - 0.15) <= 0.01
    kinds = np.array(kinds)
    assert abs(np.mean(kinds == MASK) - 0.8) <= 0.02
    assert abs(np.mean(kinds == RANDOM) - 0.1) <= 0.02
    assert abs(np.mean(kinds == KEEP) - 0.1) <= 0.02


def test_random_replacements_are_never_special():
    rng = np.random.default_rng(3)
    for _ in range(500):
        plan = sample_masks(seq(30), 0.5, rng, special_ids=SPECIAL, vocab_size=VOCAB)
        for kind, rid in zip(plan.replacement, plan.random_ids):
            if kind == RANDOM:
                assert rid not in SPECIAL and 0 <= rid < VOCAB


@settings(max_examples=100)
@given(st.lists(st.integers(0, VOCAB - 1), min_size=1, max_size=80), st.integers(0, 2**32 - 1),
       st.floats(0.01, 1.0))
def test_markers_never_selected(ids, seed, rate):
    if all(t in SPECIAL for t in ids):
        with pytest.raises(ValueError):
            sample_masks(ids, rate, np.random.default_rng(seed), special_ids=SPECIAL, vocab_size=VOCAB)
        return
    plan = sample_masks(ids, rate, np.random.default_rng(seed), special_ids=SPECIAL, vocab_size=VOCAB)
    assert all(ids[p] not in SPECIAL for p in plan.positions)
    assert len(set(plan.positions)) == len(plan.positions)
    eligible = sum(t not in SPECIAL for t in ids)
    assert len(plan.positions) == selection_count(eligible, rate)
    corrupted, labels = plan.apply(ids, mask_id=4)
    for i, t in enumerate(ids):
        if i not in plan.positions:
            assert corrupted[i] == t and labels[i] == -100
        else:
            assert labels[i] == t


def test_rejections():
    with pytest.raises(ValueError, match="no maskable"):
        sample_masks([2, 3], 0.15, np.random.default_rng(0), special_ids=SPECIAL, vocab_size=VOCAB)
    with pytest.raises(ValueError):
        sample_masks(seq(5), 0.0, np.random.default_rng(0), special_ids=SPECIAL, vocab_size=VOCAB)
    with pytest.raises(ValueError):
        MLMConfig(mask_rate=0.0)


def test_same_seed_same_plan():
    a = sample_masks(seq(40), 0.15, np.random.default_rng([5, 1, 9]), special_ids=SPECIAL, vocab_size=VOCAB)
    b = sample_masks(seq(40), 0.15, np.random.default_rng([5, 1, 9]), special_ids=SPECIAL, vocab_size=VOCAB)
    assert a == b


def test_empty_plan_gives_zero_gradient():
    logits = torch.randn(2, 5, VOCAB, requires_grad=True)
    labels = torch.full((2, 5), -100)
    loss, n = mlm_loss(logits, labels)
    loss.backward()
    assert n == 0 and loss.item() == 0.0
    assert torch.count_nonzero(logits.grad) == 0


def test_dataset_sizes_follow_split_sizes():
    tr = make_split([f"t{i}" for i in range(6217)], split="train")
    dv = make_split([f"d{i}" for i in range(777)], split="dev")
    te = make_split([f"e{i}" for i in range(778)], split="test")
    spec = MLMDatasetSpec.from_splits(tr, dv, te)
    assert len(spec.train_texts) == 6994
    assert len(spec.eval_texts) == 778


BASE = ["the movie was super nice bro", "worst trailer ever made yaar", "fans of this hero are waiting",
        "this song is a blockbuster hit", "media channel spreads nonsense"]


def toy_spec():
    texts = [BASE[i % 5] for i in range(50)]
    return MLMDatasetSpec.from_splits(make_split(texts[:40], split="train"), make_split(texts[40:45], split="dev"),
                                      make_split(texts[45:], split="test"))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_eval_loss_decreases(seed):
    spec = toy_spec()
    pre = MaskedLMPretrainer(backbone="toy-mbert", epochs=3, seed=seed).fit(spec.train_texts, spec.eval_texts)
    losses = pre.report_.eval_loss
    assert len(losses) == 3
    assert all(b < a for a, b in zip(losses, losses[1:])), losses
    assert pre.report_.eval_perplexity == pytest.approx([math.exp(x) for x in losses])


def test_pretraining_is_deterministic_and_saves(tmp_path):
    spec = toy_spec()
    a = MaskedLMPretrainer(backbone="toy-xlmr", epochs=2, seed=4).fit(spec.train_texts, spec.eval_texts)
    b = MaskedLMPretrainer(backbone="toy-xlmr", epochs=2, seed=4).fit(spec.train_texts, spec.eval_texts)
    assert a.report_.eval_loss == b.report_.eval_loss
    ckpt = a.save(tmp_path / "bb")
    assert ckpt.kind == "backbone"
    assert ckpt.meta["report"]["n_eval"] == 5
