"""Deterministic synthetic review corpus for offline runs and tests.

Three disjoint category vocabularies (planted aspect n-grams) and
rating-bucket-exclusive sentiment words make every downstream stage
separable at desk scale: category classifiers find the aspects, the
sentiment classifier finds the bucket markers, and prompt-compliance
decoding can tell present aspects from absent ones.  Every review
mentions eight aspects, so lexicon-based prompt sampling rarely skips.
"""

from __future__ import annotations

import sys

import numpy as np

from .corpus import Corpus, Review, serialize_corpus
from .evaluation import sentiment_bucket

CATEGORIES = ("diner", "arthouse", "arcade")

ASPECTS = {
    "diner": (
        "fries", "burger", "coffee", "pancakes", "milkshake", "bacon",
        "toast", "booth", "counter", "waitress", "gravy", "biscuit",
        "omelet", "syrup", "jukebox", "napkins",
        "hash browns", "sweet tea", "apple cobbler", "corned beef",
        "onion rings", "root beer", "clam chowder", "pot roast",
    ),
    "arthouse": (
        "projector", "seats", "lobby", "curtain", "matinee", "reel",
        "soundtrack", "subtitles", "usher", "balcony", "poster", "aisle",
        "marquee", "intermission", "trailer", "organ",
        "silver screen", "film noir", "double feature", "velvet rope",
        "opening credits", "closing scene", "ticket stub", "art deco",
    ),
    "arcade": (
        "joystick", "pinball", "tokens", "cabinet", "buttons", "prizes",
        "skeeball", "console", "scoreboard", "claw", "dancepad", "changer",
        "blacklight", "coinslot", "lightgun", "basketball",
        "crane game", "air hockey", "laser tag", "prize wall",
        "demo mode", "bonus round", "combo meter", "attract loop",
    ),
}

SENTIMENT_WORDS = {
    "positive": ("wonderful", "delightful", "superb", "charming",
                 "excellent", "fantastic", "splendid", "lovely"),
    "neutral": ("average", "ordinary", "passable", "tolerable",
                "unremarkable", "plain", "middling", "serviceable"),
    "negative": ("awful", "dreadful", "miserable", "shabby",
                 "tedious", "grim", "dismal", "lousy"),
}

FILLERS = ("honestly", "frankly", "somehow", "mostly", "clearly",
           "oddly", "truly", "really")

# Each template consumes aspects a0..a7, sentiments s0..s2, one filler.
TEMPLATES = (
    "the {a0} and the {a1} were {s0} . {f0} the {a2} near the {a3} felt {s1} . "
    "the {a4} with the {a5} seemed {s2} . both the {a6} and the {a7} looked {s0}",
    "{f0} the {a0} felt {s0} . the {a1} and the {a2} were {s1} while the {a3} "
    "stayed {s2} . the {a4} by the {a5} looked {s0} . the {a6} with the {a7} seemed {s1}",
    "the {a0} seemed {s0} and the {a1} felt {s1} . {f0} the {a2} and the {a3} "
    "were {s2} . the {a4} near the {a5} looked {s0} . the {a6} and the {a7} stayed {s1}",
)


def _review_rating(base: int, j: int) -> int:
    # small wobble so entities are not perfectly uniform
    if j % 4 == 3:
        wobble = 1 if j % 8 == 3 else -1
        return min(max(base + wobble, 1), 5)
    return base


def generate_mini_reviews(
    n_entities: int = 60, reviews_per_entity: int = 12, seed: int = 7
) -> list:
    rng = np.random.default_rng(seed)
    reviews = []
    for i in range(n_entities):
        entity_id = f"e{i:02d}"
        category = CATEGORIES[i % len(CATEGORIES)]
        base_rating = 1 + (i // len(CATEGORIES)) % 5
        pool = ASPECTS[category]
        house = [pool[k] for k in rng.choice(len(pool), size=12, replace=False)]
        for j in range(reviews_per_entity):
            rating = _review_rating(base_rating, j)
            bucket = sentiment_bucket(rating)
            aspects = [house[k] for k in rng.choice(len(house), size=8, replace=False)]
            sents = [
                SENTIMENT_WORDS[bucket][k]
                for k in rng.choice(len(SENTIMENT_WORDS[bucket]), size=3, replace=False)
            ]
            filler = FILLERS[int(rng.integers(len(FILLERS)))]
            text = TEMPLATES[j % len(TEMPLATES)].format(
                **{f"a{k}": aspects[k] for k in range(8)},
                s0=sents[0], s1=sents[1], s2=sents[2],
                f0=filler,
            )
            reviews.append(
                Review(
                    review_id=f"{entity_id}-r{j:02d}",
                    entity_id=entity_id,
                    text=text,
                    rating=rating,
                    categories=frozenset((category,)),
                )
            )
    return reviews


def build_mini_corpus(
    n_entities: int = 60, reviews_per_entity: int = 12, seed: int = 7
) -> Corpus:
    return Corpus(reviews=tuple(generate_mini_reviews(n_entities, reviews_per_entity, seed)))


def write_mini_corpus(path, n_entities: int = 60, reviews_per_entity: int = 12,
                      seed: int = 7) -> Corpus:
    corpus = build_mini_corpus(n_entities, reviews_per_entity, seed)
    serialize_corpus(corpus, path)
    return corpus


if __name__ == "__main__":
    target = sys.argv[1] if len(sys.argv) > 1 else "data/mini_corpus.jsonl"
    c = write_mini_corpus(target)
    print(f"wrote {len(c)} reviews / {len(c.entities)} entities to {target}")
