"""Templated stories with known entity coreference.

Every story introduces 2-4 named entities, each with a fixed epithet
("tall Alice"), and mentions every entity at least ``MIN_MENTIONS`` times.
Objects and places do not repeat inside a story, so the only repeated nouns
are entity names and the epithet is the one cue to which entity a masked
name refers. Stories are emitted pre-tagged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mentions import TaggedWord
from .probe import ProbeItem

NAMES = (
    "Alice", "Bob", "Claire", "David", "Emma", "Frank", "Grace", "Henry",
    "Irene", "Jack", "Karen", "Liam", "Maria", "Noah", "Olivia", "Peter",
    "Quinn", "Rosa", "Samuel", "Tara", "Umar", "Vera", "Walter", "Xenia",
    "Yusuf", "Zoe", "Anton", "Beatrix", "Cedric", "Delia", "Elmer", "Fiona",
    "Gideon", "Hazel", "Ignatius", "Juno", "Kasimir", "Leopold", "Mirela",
    "Nikolai", "Ottilie", "Percival", "Rosalind", "Sebastian", "Thaddeus",
    "Ursula", "Valentin", "Wilhelmina", "Bartholomew", "Genevieve",
    "Maximilian", "Anastasia", "Cornelius", "Evangeline", "Florian",
    "Gwendolyn", "Horatio", "Isadora", "Jasper", "Lucinda",
)
# a story uses at most four, all distinct; a small set keeps each one frequent
EPITHETS = ("tall", "young", "old", "quiet", "clever", "brave", "kind", "proud")
OBJECTS = (
    "book", "letter", "basket", "lamp", "coin", "ring", "map", "knife",
    "coat", "bottle", "drum", "key", "rope", "hat", "box", "cup",
)
PLACES = (
    "market", "river", "church", "bridge", "tavern", "garden", "harbor",
    "forest", "school", "castle", "mill", "square",
)
VERBS_2 = ("met", "helped", "visited", "called", "thanked", "warned", "followed", "praised")
VERBS_GIVE = ("gave", "sent", "sold", "showed", "lent")

MIN_MENTIONS = 2

# A/B: entity mentions, O: object, P: place, V/G: verbs
TEMPLATES_2 = (
    "A V B at the P .",
    "later A V B .",
    "A G B a O .",
    "A and B went to the P .",
    "A told B about the O .",
)
TEMPLATES_1 = (
    "A found a O near the P .",
    "the O belonged to A .",
    "A lived near the P .",
    "A lost the O at the P .",
)

@dataclass(frozen=True)
class Entity:
    name: str
    epithet: str


def _mention(e: Entity) -> list[TaggedWord]:
    return [TaggedWord(e.epithet, "ADJ"), TaggedWord(e.name, "PROPN")]


def _render(template: str, ents: list[Entity], rng: np.random.Generator, used: set) -> list[TaggedWord]:
    out: list[TaggedWord] = []
    for tok in template.split():
        if tok in ("A", "B"):
            out.extend(_mention(ents[0 if tok == "A" else 1]))
        elif tok in ("O", "P"):
            # objects and places never repeat within a story, so only entities form groups
            pool = [w for w in (OBJECTS if tok == "O" else PLACES) if w not in used]
            if not pool:
                pool = list(OBJECTS if tok == "O" else PLACES)
            w = pool[int(rng.integers(len(pool)))]
            used.add(w)
            out.append(TaggedWord(w, "NOUN"))
        elif tok == "V":
            out.append(TaggedWord(VERBS_2[int(rng.integers(len(VERBS_2)))], "VERB"))
        elif tok == "G":
            out.append(TaggedWord(VERBS_GIVE[int(rng.integers(len(VERBS_GIVE)))], "VERB"))
        else:
            out.append(TaggedWord(tok, "OTHER"))
    return out


def make_story(rng: np.random.Generator, min_entities: int = 2, max_entities: int = 4) -> list[TaggedWord]:
    """One story as a tagged word list; each entity is mentioned ``MIN_MENTIONS``+ times."""
    k = int(rng.integers(min_entities, max_entities + 1))
    names = rng.choice(len(NAMES), size=k, replace=False)
    epithets = rng.choice(len(EPITHETS), size=k, replace=False)
    ents = [Entity(NAMES[i], EPITHETS[j]) for i, j in zip(names, epithets)]
    counts = [0] * k
    words: list[TaggedWord] = []
    used: set[str] = set()
    while min(counts) < MIN_MENTIONS or len(words) < 25:
        if rng.random() < 0.6:
            a, b = rng.choice(k, size=2, replace=False)
            # prefer under-mentioned entities so short stories still repeat everyone
            if min(counts) < MIN_MENTIONS and counts[a] >= MIN_MENTIONS and counts[b] >= MIN_MENTIONS:
                a = counts.index(min(counts))
                b = (a + 1 + int(rng.integers(k - 1))) % k
            t = TEMPLATES_2[int(rng.integers(len(TEMPLATES_2)))]
            words += _render(t, [ents[a], ents[b]], rng, used)
            counts[a] += 1
            counts[b] += 1
        else:
            a = int(rng.integers(k))
            if min(counts) < MIN_MENTIONS and counts[a] >= MIN_MENTIONS:
                a = counts.index(min(counts))
            t = TEMPLATES_1[int(rng.integers(len(TEMPLATES_1)))]
            words += _render(t, [ents[a]], rng, used)
            counts[a] += 1
    return words


def make_corpus(n_stories: int, seed: int) -> list[list[TaggedWord]]:
    rng = np.random.default_rng([seed, 7])
    return [make_story(rng) for _ in range(n_stories)]


def to_tagged_line(story: list[TaggedWord]) -> str:
    return " ".join(f"{tw.word}/{tw.tag}" for tw in story)


def make_recovery_item(story: list[TaggedWord], rng: np.random.Generator, k: int = 4) -> ProbeItem | None:
    """Mask a non-first mention of an entity; gold is its first mention.

    Distractors are single occurrences of other noun surface forms, with
    other entity names taken first. Returns None when the story lacks
    ``k - 1`` distinct distractor forms.
    """
    words = [tw.word for tw in story]
    first: dict[str, int] = {}
    repeats: list[int] = []
    for i, tw in enumerate(story):
        if tw.tag != "PROPN":
            continue
        if tw.word in first:
            repeats.append(i)
        else:
            first[tw.word] = i
    if not repeats:
        return None
    m = repeats[int(rng.integers(len(repeats)))]
    gold_word = first[words[m]]

    names = [i for w, i in first.items() if w != words[m]]
    others: dict[str, int] = {}
    for i, tw in enumerate(story):
        if tw.tag == "NOUN" and tw.word not in others:
            others[tw.word] = i
    pool = list(rng.permutation(names)) + list(rng.permutation(list(others.values())))
    distractors = [int(i) for i in pool[: k - 1]]
    if len(distractors) < k - 1:
        return None
    cands = distractors + [gold_word]
    order = rng.permutation(len(cands))
    cands = [cands[i] for i in order]
    return ProbeItem(words, m, cands, cands.index(gold_word))


def make_recovery_probe(n_items: int, seed: int, k: int = 4) -> list[ProbeItem]:
    rng = np.random.default_rng([seed, 11])
    items: list[ProbeItem] = []
    while len(items) < n_items:
        item = make_recovery_item(make_story(rng), rng, k)
        if item is not None:
            items.append(item)
    return items
