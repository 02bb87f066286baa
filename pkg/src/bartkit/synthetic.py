"""Small deterministic corpora for desk-scale experiments and tests."""
from __future__ import annotations

import random

from .corpus import Document

_SUBJECTS = [
    "Le maire", "La ministre", "Un habitant", "Le président", "La directrice", "Un élève",
    "Le médecin", "La police", "Un chercheur", "Le club", "La mairie", "Un agriculteur",
    "Le gouvernement", "La société", "Un voisin", "Le tribunal",
]
_VERBS = [
    "annonce", "prépare", "refuse", "découvre", "présente", "attend", "critique",
    "finance", "lance", "termine", "soutient", "ouvre",
]
_OBJECTS = [
    "un nouveau projet", "la réforme", "un grand concert", "le budget", "une enquête",
    "la saison", "un accord", "le marché", "une exposition", "la rentrée", "un plan",
    "le chantier", "une campagne", "la course",
]
_COMPLEMENTS = [
    "à Paris", "à Lyon", "dans la région", "cette semaine", "depuis lundi", "en 2020",
    "pour la ville", "avec les habitants", "malgré la pluie", "sans attendre",
    "au printemps", "devant la presse",
]
_ENDINGS = [".", ".", ".", " !", " ?"]

POSITIVE_WORDS = ["excellent", "superbe", "magnifique", "formidable"]
NEGATIVE_WORDS = ["horrible", "décevant", "médiocre", "lamentable"]
_FILLER = [
    "ce", "film", "livre", "disque", "est", "vraiment", "très", "un", "peu", "trop",
    "le", "son", "et", "la", "fin", "histoire", "acteur", "voix", "prix", "public",
]


def _sentence(rng: random.Random) -> str:
    parts = [rng.choice(_SUBJECTS), rng.choice(_VERBS), rng.choice(_OBJECTS)]
    if rng.random() < 0.7:
        parts.append(rng.choice(_COMPLEMENTS))
    return " ".join(parts) + rng.choice(_ENDINGS)


def synthetic_documents(n_docs: int = 1000, seed: int = 0, min_sents: int = 2, max_sents: int = 4) -> list[Document]:
    """Template-generated French news-like documents, one per id ``syn-<i>``."""
    rng = random.Random(seed)
    return [
        Document.from_sentences(f"syn-{i}", [_sentence(rng) for _ in range(rng.randint(min_sents, max_sents))])
        for i in range(n_docs)
    ]


def synthetic_sentiment(n: int = 400, seed: int = 0, length: tuple[int, int] = (4, 10)) -> list[tuple[str, int]]:
    """Filler-word reviews with exactly one polar keyword; label 1 = positive."""
    rng = random.Random(seed)
    out = []
    for _ in range(n):
        label = rng.randint(0, 1)
        words = [rng.choice(_FILLER) for _ in range(rng.randint(*length))]
        words.insert(rng.randint(0, len(words)), rng.choice(POSITIVE_WORDS if label else NEGATIVE_WORDS))
        out.append((" ".join(words), label))
    return out
