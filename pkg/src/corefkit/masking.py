"""Masking plans: mention reference masking mixed with random word masking.

A plan is a list of :class:`MaskTarget`, one per selected word (or per
subword in ``RANDOM_SUBWORD`` mode). :func:`apply_plan` turns a plan into a
:class:`TrainingInstance` with ``[CLS]``/``[SEP]`` added, so all positions in
an instance are shifted by one relative to the source sequence.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .mentions import MentionGroup
from .tokenizer import TokenizedSequence, Vocab, WordSpan

IGNORE = -1


class Mode(str, enum.Enum):
    RANDOM_SUBWORD = "random_subword"
    WWM = "wwm"
    MRM = "mrm"
    FULL = "full"


class Strategy(str, enum.Enum):
    MRP = "MRP"
    MLM = "MLM"


class Action(enum.IntEnum):
    NONE = 0
    MASK = 1
    RANDOM = 2
    KEEP = 3


class PlanError(RuntimeError):
    """A plan breaks its own invariants (e.g. a referent is masked)."""


@dataclass(frozen=True)
class MaskingConfig:
    budget_fraction: float = 0.15
    mlm_to_mrp_word_ratio: tuple[float, float] = (4.0, 1.0)
    action_split: tuple[float, float, float] = (0.8, 0.1, 0.1)
    mode: Mode = Mode.FULL

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if not 0.0 <= self.budget_fraction <= 1.0:
            raise ValueError("budget_fraction must be in [0, 1]")
        mlm, mrp = self.mlm_to_mrp_word_ratio
        if mlm < 0 or mrp < 0 or mlm + mrp <= 0:
            raise ValueError("mlm_to_mrp_word_ratio must be non-negative and not all zero")
        if any(not 0.0 <= a <= 1.0 for a in self.action_split) or abs(sum(self.action_split) - 1.0) > 1e-9:
            raise ValueError("action_split must be fractions summing to 1")

    @property
    def mrp_share(self) -> float:
        """Probability that the next masked word is drawn as a mention reference."""
        if self.mode in (Mode.RANDOM_SUBWORD, Mode.WWM):
            return 0.0
        mlm, mrp = self.mlm_to_mrp_word_ratio
        return mrp / (mlm + mrp)


@dataclass(frozen=True)
class MaskTarget:
    word: WordSpan
    strategy: Strategy
    action: Action
    referents: tuple[WordSpan, ...] = ()

    def __post_init__(self):
        if (self.strategy is Strategy.MRP) != bool(self.referents):
            raise PlanError("referents must be non-empty exactly for MRP targets")


@dataclass(frozen=True)
class MRPTarget:
    start: int
    end: int
    referents: tuple[tuple[int, int], ...]


@dataclass
class TrainingInstance:
    input_ids: list[int]
    mlm_labels: list[int]
    actions: list[int]
    word_spans: list[tuple[int, int]]
    mrp_targets: list[MRPTarget] = field(default_factory=list)
    eligible_groups: int = 0

    @property
    def seq_len(self) -> int:
        return len(self.input_ids)

    def masked_positions(self) -> list[int]:
        return [i for i, lab in enumerate(self.mlm_labels) if lab != IGNORE]


def _draw_action(cfg: MaskingConfig, rng: np.random.Generator) -> Action:
    u = rng.random()
    m, r, _ = cfg.action_split
    if u < m:
        return Action.MASK
    if u < m + r:
        return Action.RANDOM
    return Action.KEEP


def token_budget(n: int, cfg: MaskingConfig) -> int:
    return int(np.floor(cfg.budget_fraction * n + 0.5))


def sample_plan(
    seq: TokenizedSequence,
    groups: Sequence[MentionGroup],
    cfg: MaskingConfig,
    rng: np.random.Generator,
) -> list[MaskTarget]:
    """Select words to corrupt under a subword-token budget.

    Each step draws the next word's strategy: with probability
    ``cfg.mrp_share`` (while some group still has two unmasked occurrences)
    an eligible group is chosen uniformly and one of its unmasked
    occurrences uniformly; otherwise a word is drawn uniformly from the
    remaining pool. Only words that still fit the remaining budget take part
    in either draw, so every step adds a word and the plan is maximal
    without skewing the strategy mix. A group is consumed once
    one occurrence is masked and its other occurrences become protected
    referents.
    """
    n = len(seq)
    budget = token_budget(n, cfg)
    if cfg.mode is Mode.RANDOM_SUBWORD:
        return _sample_subword_plan(seq, budget, cfg, rng)

    words = seq.words
    share = cfg.mrp_share
    masked: set[int] = set()
    protected: set[int] = set()
    consumed: set[int] = set()
    picks: list[MaskTarget] = []
    used = 0

    pool = list(range(len(words)))
    where = {w: i for i, w in enumerate(pool)}

    def drop(w: int) -> None:
        i = where.pop(w, None)
        if i is None:
            return
        last = pool.pop()
        if last != w:
            pool[i] = last
            where[last] = i

    while used < budget:
        room = budget - used
        # words that no longer fit never will: the remaining room only shrinks
        for w in [w for w in pool if words[w].length > room]:
            drop(w)
        eligible = [
            gi for gi, g in enumerate(groups)
            if gi not in consumed
            and sum(o not in masked for o in g.occurrences) >= 2
            and any(o not in masked and words[o].length <= room for o in g.occurrences)
        ]
        use_mrp = False
        if eligible and share > 0.0:
            use_mrp = (not pool) or rng.random() < share
        if use_mrp:
            gi = eligible[int(rng.integers(len(eligible)))]
            consumed.add(gi)
            free = [o for o in groups[gi].occurrences if o not in masked]
            fits = [o for o in free if words[o].length <= room]
            w = fits[int(rng.integers(len(fits)))]
            refs = [o for o in free if o != w]
            masked.add(w)
            drop(w)
            protected.update(refs)
            for r in refs:
                drop(r)
            used += words[w].length
            action = _draw_action(cfg, rng)
            if cfg.mode is Mode.FULL:
                picks.append(MaskTarget(words[w], Strategy.MRP, action, tuple(words[r] for r in refs)))
            else:
                picks.append(MaskTarget(words[w], Strategy.MLM, action))
        else:
            if not pool:
                break
            w = pool[int(rng.integers(len(pool)))]
            drop(w)
            masked.add(w)
            used += words[w].length
            picks.append(MaskTarget(words[w], Strategy.MLM, _draw_action(cfg, rng)))

    picks.sort(key=lambda t: t.word.start)
    return picks


def _sample_subword_plan(seq, budget, cfg, rng) -> list[MaskTarget]:
    owner = [0] * len(seq)
    for span in seq.words:
        for p in range(span.start, span.end + 1):
            owner[p] = span.word_index
    positions = sorted(rng.permutation(len(seq))[:budget].tolist())
    return [
        MaskTarget(WordSpan(owner[p], p, p), Strategy.MLM, _draw_action(cfg, rng))
        for p in positions
    ]


def apply_plan(
    seq: TokenizedSequence,
    plan: Sequence[MaskTarget],
    vocab: Vocab,
    rng: np.random.Generator,
    eligible_groups: int = 0,
) -> TrainingInstance:
    """Corrupt ``seq`` according to ``plan`` and attach labels."""
    original = [vocab.cls_id] + list(seq.token_ids) + [vocab.sep_id]
    n = len(original)
    input_ids = list(original)
    labels = [IGNORE] * n
    actions = [int(Action.NONE)] * n
    low, high = vocab.num_special, len(vocab)

    for t in plan:
        for p in range(t.word.start + 1, t.word.end + 2):
            if labels[p] != IGNORE:
                raise PlanError(f"position {p - 1} selected twice")
            labels[p] = original[p]
            actions[p] = int(t.action)
            if t.action is Action.MASK:
                input_ids[p] = vocab.mask_id
            elif t.action is Action.RANDOM:
                input_ids[p] = int(rng.integers(low, high)) if high > low else original[p]

    mrp = []
    for t in plan:
        if t.strategy is not Strategy.MRP:
            continue
        refs = []
        for r in t.referents:
            s, e = r.start + 1, r.end + 1
            if any(labels[p] != IGNORE for p in range(s, e + 1)):
                raise PlanError(f"referent ({r.start},{r.end}) overlaps a masked word")
            refs.append((s, e))
        mrp.append(MRPTarget(t.word.start + 1, t.word.end + 1, tuple(refs)))

    spans = [(w.start + 1, w.end + 1) for w in seq.words]
    return TrainingInstance(input_ids, labels, actions, spans, mrp, eligible_groups)
