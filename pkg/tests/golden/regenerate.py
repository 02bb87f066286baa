"""Rebuild the golden fixtures from the current implementation.

Only run this after an intentional change to the RNG derivation, the noising
algorithm or the model math; the tests compare against the frozen files.
"""
import json
from pathlib import Path

import numpy as np

from bartkit.corpus import Document
from bartkit.model.config import ModelConfig
from bartkit.model.transformer import forward_loss, init_model
from bartkit.noising import NoiseConfig, doc_rng, make_training_pair, permute_sentences
from bartkit.subword import SubwordVocab, train_bpe
from bartkit.synthetic import synthetic_documents

HERE = Path(__file__).parent

PERM_DOC = Document.from_sentences(
    "golden-perm", ["Le maire arrive.", "Il parle aux habitants.", "La séance commence.", "Tout le monde écoute."]
)
PAIR_DOC = Document.from_sentences(
    "golden-pair",
    [
        "La ministre présente la réforme à Paris.",
        "Un chercheur critique le budget cette semaine !",
        "Le club lance une campagne pour la ville.",
    ],
)


def golden_vocab() -> SubwordVocab:
    return SubwordVocab.load(HERE / "vocab.tsv")


def main():
    vocab = train_bpe(synthetic_documents(300, seed=11), vocab_size=160)
    vocab.save(HERE / "vocab.tsv")
    vocab = golden_vocab()

    perm = permute_sentences(PERM_DOC, doc_rng(42, PERM_DOC.id))
    (HERE / "permutation_seed42.json").write_text(
        json.dumps({"input": list(PERM_DOC.sentences), "output": list(perm.sentences)}, ensure_ascii=False, indent=1)
    )

    (pair,) = make_training_pair(PAIR_DOC, vocab, NoiseConfig(seed=7))
    (HERE / "pair_seed7.json").write_text(json.dumps(pair.to_json(), indent=1))

    cfg = ModelConfig(vocab_size=len(vocab), hidden_dim=32, heads=4, enc_layers=2, dec_layers=2)
    params = init_model(cfg, seed=3, dtype=np.float64)
    loss, _ = forward_loss(params, pair)
    (HERE / "loss_toy.json").write_text(json.dumps({"model_seed": 3, "config": cfg.to_json(), "loss": loss}, indent=1))


if __name__ == "__main__":
    main()
