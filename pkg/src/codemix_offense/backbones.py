"""Encoder backbones: a small offline transformer and adapters for Hugging Face checkpoints.

Every backbone exposes ``encode(input_ids, attention_mask) -> (B, T, d)`` and
``mlm_logits(input_ids, attention_mask) -> (B, T, V)`` plus ``hidden_size`` and
``vocab_size``. A :class:`Backbone` bundles the encoder with its tokenizer.
"""
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import torch
from torch import nn

from .textprep import HFTokenizer, SubwordTokenizer

HF_MODELS = {"mbert": "bert-base-multilingual-cased", "xlmr": "xlm-roberta-base"}
TOY_STYLES = {"toy-mbert": "wordpiece", "toy-xlmr": "sentencepiece"}
BACKBONES = tuple(HF_MODELS) + tuple(TOY_STYLES)


@dataclass
class ToyEncoderConfig:
    vocab_size: int
    hidden_size: int = 32
    num_layers: int = 1
    num_heads: int = 2
    ff_size: int = 64
    max_positions: int = 512
    dropout: float = 0.1
    pad_id: int = 0


class ToyEncoder(nn.Module):
    """Pre-LN transformer encoder with a masked-LM prediction head."""

    def __init__(self, config: ToyEncoderConfig):
        super().__init__()
        self.config = config
        d = config.hidden_size
        self.tok_emb = nn.Embedding(config.vocab_size, d, padding_idx=config.pad_id)
        self.pos_emb = nn.Embedding(config.max_positions, d)
        self.emb_norm = nn.LayerNorm(d)
        self.emb_drop = nn.Dropout(config.dropout)
        layer = nn.TransformerEncoderLayer(
            d, config.num_heads, config.ff_size, config.dropout, activation="gelu", batch_first=True, norm_first=True
        )
        self.layers = nn.TransformerEncoder(layer, config.num_layers, enable_nested_tensor=False)
        self.final_norm = nn.LayerNorm(d)
        self.mlm_head = nn.Sequential(nn.Linear(d, d), nn.GELU(), nn.LayerNorm(d), nn.Linear(d, config.vocab_size))

    @property
    def hidden_size(self):
        return self.config.hidden_size

    @property
    def vocab_size(self):
        return self.config.vocab_size

    def encode(self, input_ids, attention_mask):
        T = input_ids.shape[1]
        if T > self.config.max_positions:
            raise ValueError(f"sequence of {T} subtokens exceeds max_positions={self.config.max_positions}")
        pos = torch.arange(T, device=input_ids.device)
        x = self.emb_drop(self.emb_norm(self.tok_emb(input_ids) + self.pos_emb(pos)[None]))
        x = self.layers(x, src_key_padding_mask=attention_mask == 0)
        return self.final_norm(x)

    def mlm_logits(self, input_ids, attention_mask):
        return self.mlm_head(self.encode(input_ids, attention_mask))


class HFEncoder(nn.Module):
    """Adapter around ``AutoModelForMaskedLM`` (mBERT, XLM-R, ...)."""

    def __init__(self, model):
        super().__init__()
        self.model = model

    @property
    def hidden_size(self):
        return self.model.config.hidden_size

    @property
    def vocab_size(self):
        return self.model.config.vocab_size

    def encode(self, input_ids, attention_mask):
        return self.model.base_model(input_ids=input_ids, attention_mask=attention_mask).last_hidden_state

    def mlm_logits(self, input_ids, attention_mask):
        return self.model(input_ids=input_ids, attention_mask=attention_mask).logits


@dataclass
class Backbone:
    name: str
    encoder: nn.Module
    tokenizer: object

    @property
    def is_toy(self):
        return self.name in TOY_STYLES

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        meta = {"name": self.name}
        if self.is_toy:
            meta["toy_config"] = asdict(self.encoder.config)
            torch.save(self.encoder.state_dict(), directory / "encoder.pt")
            self.tokenizer.save(directory / "tokenizer")
        else:
            self.encoder.model.save_pretrained(directory / "hf")
            self.tokenizer.save(directory / "hf")
        (directory / "backbone.json").write_text(json.dumps(meta, indent=2, sort_keys=True))

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        meta = json.loads((directory / "backbone.json").read_text())
        if "toy_config" in meta:
            encoder = ToyEncoder(ToyEncoderConfig(**meta["toy_config"]))
            encoder.load_state_dict(torch.load(directory / "encoder.pt", weights_only=True))
            tokenizer = SubwordTokenizer.load(directory / "tokenizer")
        else:
            from transformers import AutoModelForMaskedLM

            encoder = HFEncoder(AutoModelForMaskedLM.from_pretrained(directory / "hf"))
            tokenizer = HFTokenizer.load(directory / "hf")
        return cls(meta["name"], encoder, tokenizer)


def build_backbone(name, texts=None, seed=0, **toy_options) -> Backbone:
    """Fresh backbone by name.

    Toy backbones need ``texts`` to build their vocabulary and are initialised
    from ``seed``; Hugging Face backbones are fetched with ``from_pretrained``.
    """
    if name in TOY_STYLES:
        if texts is None:
            raise ValueError(f"backbone {name!r} builds its vocabulary from training texts; pass texts=")
        tokenizer = SubwordTokenizer.train(texts, style=TOY_STYLES[name])
        config = ToyEncoderConfig(vocab_size=tokenizer.vocab_size, pad_id=tokenizer.pad_id, **toy_options)
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            encoder = ToyEncoder(config)
        return Backbone(name, encoder, tokenizer)
    if name in HF_MODELS:
        from transformers import AutoModelForMaskedLM, AutoTokenizer

        hf_name = HF_MODELS[name]
        return Backbone(name, HFEncoder(AutoModelForMaskedLM.from_pretrained(hf_name)),
                        HFTokenizer(AutoTokenizer.from_pretrained(hf_name)))
    raise ValueError(f"unknown backbone {name!r}; expected one of {BACKBONES}")


def perplexity(mean_cross_entropy):
    return math.exp(mean_cross_entropy)
