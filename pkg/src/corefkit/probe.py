"""Coreference probes on a trained encoder.

* Mention recovery: mask a mention and rank candidate context words by the
  copy head's word probability.
* Disambiguation: substitute each candidate string for a masked pronoun and
  score it with the MLM head (mean subword log-probability).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .model import ModelParams, forward, mlm_head_forward
from .objectives import word_copy_log_probs
from .tokenizer import Vocab, tokenize


class ProbeError(ValueError):
    pass


@dataclass
class ProbeItem:
    words: list[str]
    mask_word: int
    candidates: list  # word indices (recovery) or strings (disambiguation)
    gold: int

    def __post_init__(self):
        if not 0 <= self.mask_word < len(self.words):
            raise ProbeError(f"mask word {self.mask_word} outside passage")
        if not 0 <= self.gold < len(self.candidates):
            raise ProbeError(f"gold index {self.gold} outside candidates")
        if self.mask_word in [c for c in self.candidates if isinstance(c, int)]:
            raise ProbeError("masked word listed among candidates")


def _masked_encoding(words: Sequence[str], mask_word: int, vocab: Vocab):
    seq = tokenize(words, vocab)
    ids = [vocab.cls_id] + seq.token_ids + [vocab.sep_id]
    span = seq.words[mask_word]
    for p in range(span.start + 1, span.end + 2):
        ids[p] = vocab.mask_id
    spans = [(w.start + 1, w.end + 1) for w in seq.words]
    return seq, ids, spans


def encoded_length(item: ProbeItem, vocab: Vocab) -> int:
    """Model input length of ``item`` including [CLS] and [SEP]."""
    return len(tokenize(item.words, vocab)) + 2


def _rank(scores: Sequence[float]) -> list[int]:
    # stable: equal scores keep the lower candidate index first
    return sorted(range(len(scores)), key=lambda j: (-scores[j], j))


def copy_scores_for_item(params: ModelParams, vocab: Vocab, item: ProbeItem) -> list[float]:
    """Log Pr(candidate | masked mention) under the copy head, per candidate."""
    for c in item.candidates:
        if not isinstance(c, (int, np.integer)) or not 0 <= c < len(item.words):
            raise ProbeError(f"candidate {c!r} outside passage")
    seq, ids, spans = _masked_encoding(item.words, item.mask_word, vocab)
    H = forward(params, np.asarray(ids)[None, :]).H[0]
    ctx = [j for j in range(len(spans)) if j != item.mask_word]
    starts = np.array([spans[j][0] for j in ctx])
    ends = np.array([spans[j][1] for j in ctx])
    logp = word_copy_log_probs(H, params["copy_v"], spans[item.mask_word], starts, ends)
    where = {j: k for k, j in enumerate(ctx)}
    return [float(logp[where[c]]) for c in item.candidates]


def recover_mention(params: ModelParams, vocab: Vocab, item: ProbeItem) -> list[int]:
    """Candidate indices ordered from most to least likely referent."""
    return _rank(copy_scores_for_item(params, vocab, item))


def mlm_recovers(params: ModelParams, vocab: Vocab, item: ProbeItem) -> bool:
    """Whether the vocabulary argmax at every masked subword rebuilds the word."""
    seq, ids, spans = _masked_encoding(item.words, item.mask_word, vocab)
    H = forward(params, np.asarray(ids)[None, :]).H[0]
    s, e = spans[item.mask_word]
    logits, _ = mlm_head_forward(params, H[s : e + 1])
    logits[:, : vocab.num_special] = -np.inf
    pred = logits.argmax(-1).tolist()
    return pred == seq.token_ids[s - 1 : e]


@dataclass
class RecoveryReport:
    accuracy: float
    mrr: float
    n: int


def evaluate_recovery(params: ModelParams, vocab: Vocab, items: Sequence[ProbeItem]) -> RecoveryReport:
    hits = 0
    rr = 0.0
    for item in items:
        ranking = recover_mention(params, vocab, item)
        hits += ranking[0] == item.gold
        rr += 1.0 / (ranking.index(item.gold) + 1)
    n = len(items)
    return RecoveryReport(hits / n if n else 0.0, rr / n if n else 0.0, n)


def evaluate_mlm_recovery(params: ModelParams, vocab: Vocab, items: Sequence[ProbeItem]) -> float:
    if not items:
        return 0.0
    return sum(mlm_recovers(params, vocab, it) for it in items) / len(items)


def candidate_scores(params: ModelParams, vocab: Vocab, words: Sequence[str], pronoun: int, candidates: Sequence[str]) -> list[float]:
    """Mean MLM log-probability of each candidate's subwords in the pronoun slot."""
    if not 0 <= pronoun < len(words):
        raise ProbeError(f"pronoun index {pronoun} outside passage")
    scores = []
    for cand in candidates:
        cand_words = cand.split()
        if not cand_words:
            raise ProbeError("candidate tokenizes to zero subwords")
        filled = list(words[:pronoun]) + cand_words + list(words[pronoun + 1 :])
        seq = tokenize(filled, vocab)
        s = seq.words[pronoun].start
        e = seq.words[pronoun + len(cand_words) - 1].end
        ids = [vocab.cls_id] + seq.token_ids + [vocab.sep_id]
        target = ids[s + 1 : e + 2]
        for p in range(s + 1, e + 2):
            ids[p] = vocab.mask_id
        H = forward(params, np.asarray(ids)[None, :]).H[0]
        logits, _ = mlm_head_forward(params, H[s + 1 : e + 2])
        m = logits.max(-1, keepdims=True)
        logp = logits - m - np.log(np.exp(logits - m).sum(-1, keepdims=True))
        scores.append(float(logp[np.arange(len(target)), target].mean()))
    return scores


def disambiguate(params: ModelParams, vocab: Vocab, words: Sequence[str], pronoun: int, candidates: Sequence[str]) -> int:
    """Index of the best-scoring candidate; ties go to the lower index."""
    return _rank(candidate_scores(params, vocab, words, pronoun, candidates))[0]


def evaluate_disambiguation(params: ModelParams, vocab: Vocab, items: Sequence[ProbeItem]) -> float:
    if not items:
        return 0.0
    hits = sum(disambiguate(params, vocab, it.words, it.mask_word, it.candidates) == it.gold for it in items)
    return hits / len(items)


# --- probe files ------------------------------------------------------------


def format_probe_line(item: ProbeItem) -> str:
    cands = "|".join(str(c) for c in item.candidates)
    return f"{' '.join(item.words)}\t{item.mask_word}\t{cands}\t{item.gold}"


def parse_probe_line(line: str, mode: str) -> ProbeItem:
    fields = line.rstrip("\n").split("\t")
    if len(fields) != 4:
        raise ProbeError(f"expected 4 tab-separated fields, got {len(fields)}")
    passage, mask, cands, gold = fields
    try:
        mask_i, gold_i = int(mask), int(gold)
    except ValueError as exc:
        raise ProbeError(f"bad index field: {exc}") from None
    parts = cands.split("|")
    if mode == "recover":
        try:
            cand_list = [int(c) for c in parts]
        except ValueError:
            raise ProbeError("recovery candidates must be word indices") from None
    elif mode == "disambiguate":
        cand_list = parts
    else:
        raise ValueError(f"unknown probe mode {mode!r}")
    return ProbeItem(passage.split(), mask_i, cand_list, gold_i)


def read_probe_file(path, mode: str) -> list[ProbeItem]:
    items = []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            items.append(parse_probe_line(line, mode))
        except ProbeError as exc:
            raise ProbeError(f"{path}:{n}: {exc}") from None
    return items


def write_probe_file(path, items: Sequence[ProbeItem]) -> None:
    Path(path).write_text("".join(format_probe_line(it) + "\n" for it in items), encoding="utf-8")

