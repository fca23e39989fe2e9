"""Subword vocabulary and word-aligned tokenization.

Non-initial subwords carry a ``##`` prefix. Every word maps to a contiguous
run of subword positions, recorded as a :class:`WordSpan`, so whole-word
masking and start/end factorization can be expressed in positions.
"""

from __future__ import annotations

import collections
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

PAD, UNK, MASK, CLS, SEP = "[PAD]", "[UNK]", "[MASK]", "[CLS]", "[SEP]"
SPECIAL_TOKENS = (PAD, UNK, MASK, CLS, SEP)
CONT = "##"


class VocabError(ValueError):
    pass


@dataclass(frozen=True)
class Vocab:
    entries: tuple[str, ...]
    index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if tuple(self.entries[:5]) != SPECIAL_TOKENS:
            raise VocabError("first five entries must be the special tokens")
        if len(set(self.entries)) != len(self.entries):
            raise VocabError("vocabulary entries must be unique")
        object.__setattr__(self, "index", {t: i for i, t in enumerate(self.entries)})

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def id(self, token: str) -> int:
        return self.index.get(token, self.unk_id)

    pad_id = property(lambda self: 0)
    unk_id = property(lambda self: 1)
    mask_id = property(lambda self: 2)
    cls_id = property(lambda self: 3)
    sep_id = property(lambda self: 4)

    @property
    def num_special(self) -> int:
        return len(SPECIAL_TOKENS)

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.entries) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(tuple(lines))

    def fingerprint(self) -> str:
        return hashlib.sha256("\n".join(self.entries).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class WordSpan:
    word_index: int
    start: int
    end: int  # inclusive

    def __post_init__(self):
        if self.start > self.end:
            raise ValueError(f"invalid span ({self.start},{self.end})")

    @property
    def length(self) -> int:
        return self.end - self.start + 1


@dataclass
class TokenizedSequence:
    token_ids: list[int]
    words: list[WordSpan]
    raw_words: list[str]
    tags: list[str] | None = None
    shortened: bool = False

    def __len__(self) -> int:
        return len(self.token_ids)


def _base_symbols(words: Iterable[str]) -> list[str]:
    chars = sorted({c for w in words for c in w})
    return chars + [CONT + c for c in chars]


def build_vocab(corpus: Iterable[str], target_size: int) -> Vocab:
    """Learn a subword inventory by frequency-ranked pair merging.

    ``corpus`` yields text lines; words are whitespace-separated. The base
    alphabet holds every character in both its word-initial and ``##``
    continuation form, so any word over the corpus alphabet round-trips.
    Ties between equally frequent pairs go to the lexicographically
    smallest pair, which makes the result depend only on the corpus.
    """
    counts: collections.Counter[str] = collections.Counter()
    for line in corpus:
        counts.update(line.split())
    if not counts:
        raise VocabError("empty corpus")

    base = _base_symbols(counts)
    minimum = len(SPECIAL_TOKENS) + len(base)
    if target_size < minimum:
        raise VocabError(
            f"target_size {target_size} too small; need at least {minimum} "
            f"(specials + both forms of {len(base) // 2} characters)"
        )

    entries = list(SPECIAL_TOKENS) + base
    known = set(entries)
    # word -> list of current symbols
    segs = {w: [w[0]] + [CONT + c for c in w[1:]] for w in sorted(counts)}

    while len(entries) < target_size:
        pairs: collections.Counter[tuple[str, str]] = collections.Counter()
        for w, syms in segs.items():
            f = counts[w]
            for a, b in zip(syms, syms[1:]):
                pairs[(a, b)] += f
        if not pairs:
            break
        best = min(pairs.items(), key=lambda kv: (-kv[1], kv[0]))[0]
        merged = best[0] + best[1][len(CONT):]
        for w, syms in segs.items():
            if len(syms) < 2:
                continue
            out = []
            i = 0
            while i < len(syms):
                if i + 1 < len(syms) and syms[i] == best[0] and syms[i + 1] == best[1]:
                    out.append(merged)
                    i += 2
                else:
                    out.append(syms[i])
                    i += 1
            segs[w] = out
        if merged not in known:
            known.add(merged)
            entries.append(merged)
    return Vocab(tuple(entries))


def tokenize_word(word: str, vocab: Vocab) -> list[int]:
    """Greedy longest-match-first segmentation; [UNK] if any piece fails."""
    ids = []
    start = 0
    while start < len(word):
        end = len(word)
        found = None
        while end > start:
            piece = word[start:end]
            if start > 0:
                piece = CONT + piece
            if piece in vocab.index:
                found = vocab.index[piece]
                break
            end -= 1
        if found is None:
            return [vocab.unk_id]
        ids.append(found)
        start = end
    return ids or [vocab.unk_id]


def tokenize(words: Sequence[str], vocab: Vocab, tags: Sequence[str] | None = None) -> TokenizedSequence:
    token_ids: list[int] = []
    spans: list[WordSpan] = []
    for i, w in enumerate(words):
        ids = tokenize_word(w, vocab)
        spans.append(WordSpan(i, len(token_ids), len(token_ids) + len(ids) - 1))
        token_ids.extend(ids)
    return TokenizedSequence(token_ids, spans, list(words), list(tags) if tags is not None else None)


def detokenize_word(span: WordSpan, seq: TokenizedSequence, vocab: Vocab) -> str:
    if span.start < 0 or span.end >= len(seq.token_ids) or span.start > span.end:
        raise ValueError(f"invalid span ({span.start},{span.end})")
    pieces = []
    for tid in seq.token_ids[span.start : span.end + 1]:
        tok = vocab.entries[tid]
        pieces.append(tok[len(CONT):] if tok.startswith(CONT) else tok)
    return "".join(pieces)
