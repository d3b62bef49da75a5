"""Offline test fixtures: a tiny randomly initialized masked LM checkpoint.

The checkpoint has the production hidden size (768) but only two layers and
a toy WordPiece vocabulary; everything loads from a local directory, no
downloads.
"""
import json
from pathlib import Path

import pytest
import torch

VOCAB = (
    ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
    + list("abcdefghijklmnopqrstuvwxyz")
    + ["the", "in", "at", "of", "city", "team", "fruit", "league", "played",
       "won", "games", "grows", "sweet", "orchard", "stadium", "crowd",
       "##s", "##ing", "##ed"]
)


@pytest.fixture(scope="session")
def tiny_model_dir(tmp_path_factory) -> Path:
    from transformers import BertConfig, BertModel
    out = tmp_path_factory.mktemp("tiny-mlm")
    (out / "vocab.txt").write_text("\n".join(VOCAB) + "\n", encoding="utf-8")
    (out / "tokenizer_config.json").write_text(
        json.dumps({"tokenizer_class": "BertTokenizer", "do_lower_case": True}),
        encoding="utf-8")
    config = BertConfig(vocab_size=len(VOCAB), hidden_size=768,
                        num_hidden_layers=2, num_attention_heads=4,
                        intermediate_size=128, max_position_embeddings=160)
    torch.manual_seed(1234)
    model = BertModel(config)
    model.save_pretrained(out)
    return out


@pytest.fixture(scope="session")
def encoder(tiny_model_dir):
    from ctxbridge.extract import MaskedContextEncoder
    return MaskedContextEncoder(str(tiny_model_dir))


def make_corpus(path: Path, n: int = 100, long_every: int = 3) -> int:
    """Write a corpus whose every ``long_every``-th record overflows 128 tokens."""
    rows = []
    for i in range(n):
        if i % long_every == 0:
            left = "the city " * 120    # far beyond the sequence budget
            right = "of the league " * 90
        else:
            left = f"the fruit grows sweet in the orchard {'x' * (i % 4 + 1)}"
            right = "and the crowd played games"
        rows.append({"id": f"rec{i}", "entity": f"E{i % 10}",
                     "left": left, "right": right})
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n", encoding="utf-8")
    return n
