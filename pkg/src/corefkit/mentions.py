"""Part-of-speech tagging and repeated-noun grouping.

Two taggers are available: a pass-through reader for ``word/TAG`` input and
a small rule-based tagger (closed-class lexicon plus suffix rules). The
heuristic tagger only has to surface repeated nouns reliably; pre-tagged
input is the accurate path.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

TAGS = ("NOUN", "PROPN", "PRON", "VERB", "ADJ", "ADV", "OTHER")
MENTION_TAGS = frozenset({"NOUN", "PROPN"})


class TaggingError(ValueError):
    pass


@dataclass(frozen=True)
class TaggedWord:
    word: str
    tag: str

    def __post_init__(self):
        if self.tag not in TAGS:
            raise TaggingError(f"unknown tag {self.tag!r}; expected one of {TAGS}")


@dataclass
class MentionGroup:
    key: str
    occurrences: list[int]

    @property
    def eligible(self) -> bool:
        return len(self.occurrences) >= 2


_PRONOUNS = {
    "i", "me", "my", "mine", "myself", "you", "your", "yours", "yourself",
    "he", "him", "his", "himself", "she", "her", "hers", "herself", "it",
    "its", "itself", "we", "us", "our", "ours", "ourselves", "they", "them",
    "their", "theirs", "themselves", "this", "that", "these", "those", "who",
    "whom", "whose", "which", "what", "someone", "everyone", "nobody",
}
_FUNCTION = {
    "a", "an", "the", "and", "or", "but", "nor", "so", "yet", "if", "then",
    "of", "in", "on", "at", "to", "from", "by", "with", "for", "about",
    "into", "onto", "over", "under", "after", "before", "between", "through",
    "during", "without", "within", "near", "as", "than", "because", "while",
    "when", "where", "not", "no", "all", "some", "any", "each", "every",
    "both", "either", "neither", "there", "here", "up", "down", "out", "off",
    "again", "once", "also", "too", "very",
}
_VERBS = {
    "is", "are", "was", "were", "be", "been", "being", "am", "has", "have",
    "had", "do", "does", "did", "will", "would", "can", "could", "shall",
    "should", "may", "might", "must", "said", "says", "say", "met", "meet",
    "gave", "give", "gives", "took", "take", "takes", "saw", "see", "sees",
    "told", "tell", "tells", "made", "make", "makes", "went", "go", "goes",
    "came", "come", "comes", "got", "get", "gets", "knew", "know", "knows",
    "thought", "think", "found", "find", "left", "leave", "brought", "bring",
    "sent", "send", "sold", "sell", "bought", "buy", "won", "lost", "ran",
    "wrote", "write", "read", "felt", "kept", "held", "paid", "taught",
    "thanks", "helps", "visits", "calls", "asks", "likes", "wants", "needs",
}
_ADJS = {
    "good", "bad", "new", "old", "young", "big", "small", "great", "little",
    "long", "short", "high", "low", "happy", "sad", "kind", "red", "blue",
    "green", "other", "same", "first", "last", "next", "many", "few", "much",
}
_ADV_SUFFIXES = ("ly",)
_VERB_SUFFIXES = ("ed", "ing", "ize", "ise", "ify")
_ADJ_SUFFIXES = ("ous", "ful", "ive", "able", "ible", "less", "ish", "ical", "ic")


def heuristic_tag(word: str) -> str:
    """Tag one word from its form alone (no sentence context)."""
    if not any(c.isalpha() for c in word):
        return "OTHER"
    low = word.lower()
    if low in _PRONOUNS:
        return "PRON"
    if low in _FUNCTION:
        return "OTHER"
    if low in _VERBS:
        return "VERB"
    if low in _ADJS:
        return "ADJ"
    if word[0].isupper():
        return "PROPN"
    if low.endswith(_ADV_SUFFIXES) and len(low) > 4:
        return "ADV"
    if low.endswith(_VERB_SUFFIXES) and len(low) > 4:
        return "VERB"
    if low.endswith(_ADJ_SUFFIXES) and len(low) > 5:
        return "ADJ"
    return "NOUN"


def parse_tagged_line(line: str) -> list[TaggedWord]:
    """Parse ``word/TAG word/TAG ...``; the tag is taken after the last slash."""
    out = []
    for tok in line.split():
        word, sep, tag = tok.rpartition("/")
        if not sep or not word:
            raise TaggingError(f"token {tok!r} has no /TAG suffix")
        out.append(TaggedWord(word, tag))
    return out


def tag_words(words: Sequence[str], tagger="heuristic", tags: Sequence[str] | None = None) -> list[TaggedWord]:
    """Tag ``words`` with the builtin tagger, or pass ``tags`` through.

    ``tagger`` is ``"heuristic"``, ``"pretagged"`` (requires ``tags``), or any
    callable mapping a word to a tag.
    """
    if tagger == "pretagged":
        if tags is None or len(tags) != len(words):
            n = "no" if tags is None else len(tags)
            raise TaggingError(f"{n} tags for {len(words)} words")
        return [TaggedWord(w, t) for w, t in zip(words, tags)]
    fn = heuristic_tag if tagger == "heuristic" else tagger
    return [TaggedWord(w, fn(w)) for w in words]


def normalize(word: str) -> str:
    return word.casefold()


def detect_mention_groups(tagged: Sequence[TaggedWord]) -> list[MentionGroup]:
    """Group NOUN/PROPN words by case-folded surface form, in first-seen order."""
    groups: dict[str, MentionGroup] = {}
    for i, tw in enumerate(tagged):
        if tw.tag not in MENTION_TAGS:
            continue
        key = normalize(tw.word)
        if key not in groups:
            groups[key] = MentionGroup(key, [])
        groups[key].occurrences.append(i)
    return list(groups.values())
