"""Synthetic desk-scale review corpus.

Generates short, colloquial restaurant-review sentences from a weighted
template grammar. Function words are determined by the template while
content words (nouns, adjectives, some verbs) carry the meaning, so a good
communication scheme can reconstruct sentences from a few kept tokens. Used
for experiments and demos where a full-scale review corpus is out of reach.
"""

from __future__ import annotations

import numpy as np

NOUNS = [
    "food", "service", "pizza", "staff", "place", "atmosphere", "coffee",
    "burger", "dessert", "steak", "salad", "menu", "waiter", "bartender",
    "patio", "brunch", "pasta", "soup", "bread", "wine", "beer", "tacos",
    "sushi", "ramen", "cheesecake", "chicken", "bacon", "pancakes", "fries",
    "cocktails", "lobster", "noodles", "curry", "salsa", "tea", "juice",
    "omelette", "waffles", "pie", "sandwich",
]

ADJECTIVES = [
    "great", "amazing", "terrible", "delicious", "friendly", "slow", "fresh",
    "cozy", "bland", "perfect", "awful", "tasty", "rude", "quick", "lovely",
    "overpriced", "crispy", "stale", "warm", "fantastic", "spicy", "greasy",
    "dry", "creamy", "crowded", "noisy", "charming", "superb",
]

ADVERBS = [
    "very", "really", "absolutely", "pretty", "incredibly", "surprisingly",
    "honestly", "truly",
]

# (weight, template); slots: {n1} {n2} {a1} {a2} {adv}. Surface strings are
# raw text, re-tokenized downstream like any other corpus line.
TEMPLATES = [
    (3, "The {n1} was {a1}."),
    (2, "The {n1} was {adv} {a1}."),
    (2, "I loved the {a1} {n1}."),
    (2, "{A1} {n1} and {a2} {n2}."),
    (1, "We will be back for the {n1}."),
    (1, "The {n1} was not {a1}."),
    (1, "Highly recommend the {n1} here."),
    (1, "My {n1} arrived {a1} and {a2}."),
    (1, "This place has the best {n1} in town."),
    (1, "Our {n1} was {a1} but the {n2} was {a2}."),
    (1, "You should try the {n1}!"),
    (1, "It was a {a1} {n1}."),
]


def _zipf_weights(n: int, exponent: float = 0.7) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1) ** exponent
    return w / w.sum()


def generate_sentence(rng: np.random.Generator) -> str:
    weights = np.array([w for w, _ in TEMPLATES], dtype=np.float64)
    template = TEMPLATES[rng.choice(len(TEMPLATES), p=weights / weights.sum())][1]
    noun_p = _zipf_weights(len(NOUNS))
    adj_p = _zipf_weights(len(ADJECTIVES))
    n1, n2 = rng.choice(len(NOUNS), size=2, replace=False, p=noun_p)
    a1, a2 = rng.choice(len(ADJECTIVES), size=2, replace=False, p=adj_p)
    adv = ADVERBS[rng.choice(len(ADVERBS), p=_zipf_weights(len(ADVERBS)))]
    return template.format(
        n1=NOUNS[n1], n2=NOUNS[n2], a1=ADJECTIVES[a1], a2=ADJECTIVES[a2],
        A1=ADJECTIVES[a1].capitalize(), adv=adv,
    )


def generate_desk_corpus(n: int = 5000, seed: int = 0) -> list[str]:
    """Generate n distinct review-style sentences, deterministically."""
    rng = np.random.default_rng(seed)
    seen: set[str] = set()
    lines: list[str] = []
    attempts = 0
    while len(lines) < n:
        attempts += 1
        if attempts > 200 * n:
            raise RuntimeError(f"could not generate {n} distinct sentences")
        line = generate_sentence(rng)
        if line not in seen:
            seen.add(line)
            lines.append(line)
    return lines
