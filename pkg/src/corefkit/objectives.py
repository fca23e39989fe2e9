"""Copy-based mention reference loss, masked LM loss, and their sum.

Copy scores are bilinear in the hidden states: ``score(k | i) =
(v * h_k) . h_i`` with the trainable gate ``v`` (``copy_v``). A masked word
is recovered from a context word through two token distributions, one over
candidate word starts (queried from the masked word's first subword) and one
over candidate word ends (queried from its last subword). The loss for a
target sums the word probabilities of all its referents inside one log.

Candidate positions are the starts/ends of words that carry no MLM label,
so the query word, every other corrupted word, and [CLS]/[SEP]/padding are
never copy sources.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .masking import IGNORE, MRPTarget, TrainingInstance
from .model import ModelParams, backward, forward, mlm_head_backward, mlm_head_forward


def _log_softmax(s):
    m = s.max()
    z = s - m
    return z - np.log(np.exp(z).sum())


def copy_scores(H, V, i: int, candidates) -> np.ndarray:
    cand = np.asarray(candidates, dtype=int)
    return (H[cand] * V) @ H[i]


def copy_distribution(H, V, i: int, candidates) -> np.ndarray:
    """Probability of copying each candidate position into masked position ``i``."""
    if len(candidates) == 0:
        raise ValueError("empty candidate set")
    return np.exp(_log_softmax(copy_scores(H, V, i, candidates)))


def candidate_positions(inst: TrainingInstance) -> tuple[np.ndarray, np.ndarray]:
    """Start and end positions of every word left uncorrupted in ``inst``."""
    lab = inst.mlm_labels
    starts, ends = [], []
    for s, e in inst.word_spans:
        if all(lab[p] == IGNORE for p in range(s, e + 1)):
            starts.append(s)
            ends.append(e)
    return np.asarray(starts, dtype=int), np.asarray(ends, dtype=int)


def _index_of(arr: np.ndarray, pos: int) -> int:
    hit = np.flatnonzero(arr == pos)
    if hit.size == 0:
        raise ValueError(f"position {pos} is not in the candidate set")
    return int(hit[0])


def word_copy_prob(H, V, target: tuple[int, int], word: tuple[int, int], starts, ends) -> float:
    """Pr(word | target) = Pr(start_j | start_i) * Pr(end_j | end_i)."""
    starts = np.asarray(starts)
    ends = np.asarray(ends)
    js, je = _index_of(starts, word[0]), _index_of(ends, word[1])
    ps = copy_distribution(H, V, target[0], starts)
    pe = copy_distribution(H, V, target[1], ends)
    return float(ps[js] * pe[je])


def word_copy_log_probs(H, V, target: tuple[int, int], starts, ends) -> np.ndarray:
    """Log Pr(w_j | target) for every candidate word j (aligned with ``starts``)."""
    ls = _log_softmax(copy_scores(H, V, target[0], starts))
    le = _log_softmax(copy_scores(H, V, target[1], ends))
    return ls + le


def mrp_loss(H, V, targets: Sequence[MRPTarget], starts, ends, need_grads: bool = True):
    """Sum over targets of ``-log sum_{referents} Pr(referent | target)``.

    Returns ``(loss, dH, dV, logliks)``; the gradients are None when
    ``need_grads`` is false.
    """
    starts = np.asarray(starts, dtype=int)
    ends = np.asarray(ends, dtype=int)
    dH = np.zeros_like(H) if need_grads else None
    dV = np.zeros_like(V) if need_grads else None
    total = 0.0
    logliks = []
    for t in targets:
        if not t.referents:
            raise ValueError(f"MRP target ({t.start},{t.end}) has no referents")
        if starts.size == 0:
            raise ValueError("empty candidate set")
        ls = _log_softmax(copy_scores(H, V, t.start, starts))
        le = _log_softmax(copy_scores(H, V, t.end, ends))
        js = np.array([_index_of(starts, r[0]) for r in t.referents])
        je = np.array([_index_of(ends, r[1]) for r in t.referents])
        la = ls[js] + le[je]
        m = la.max()
        log_z = m + np.log(np.exp(la - m).sum())
        total -= log_z
        logliks.append(float(log_z))
        if not need_grads:
            continue
        resp = np.exp(la - log_z)
        for q, cand, logp, idx in ((t.start, starts, ls, js), (t.end, ends, le, je)):
            g = np.exp(logp)
            np.add.at(g, idx, -resp)
            hq = H[q]
            hc = H[cand]
            dH[cand] += np.outer(g, V * hq)
            dH[q] += (g @ hc) * V
            dV += g @ (hc * hq)
    return float(total), dH, dV, logliks


def mlm_rows_loss(params: ModelParams, h, labels, weights, grads=None):
    """Weighted cross-entropy of the MLM head on rows ``h`` (M, d).

    Returns ``(weighted_loss, dh, per-row log-likelihoods)``; head gradients
    accumulate into ``grads`` when given.
    """
    labels = np.asarray(labels, dtype=int)
    weights = np.asarray(weights, dtype=float)
    logits, cache = mlm_head_forward(params, h)
    m = logits.max(-1, keepdims=True)
    z = logits - m
    lse = np.log(np.exp(z).sum(-1, keepdims=True))
    logp = z - lse
    ll = logp[np.arange(len(labels)), labels]
    loss = float(-(weights * ll).sum())
    if grads is None:
        return loss, None, ll
    dlogits = np.exp(logp)
    dlogits[np.arange(len(labels)), labels] -= 1.0
    dlogits *= weights[:, None]
    dh = mlm_head_backward(params, cache, dlogits, grads)
    return loss, dh, ll


def mlm_loss(H, params: ModelParams, mlm_labels, need_grads: bool = True):
    """Mean cross-entropy over labelled positions of one sequence.

    Returns ``(loss, dH, head_grads)``; with no labelled position the loss is
    0 and all gradients are zero.
    """
    grads = params.zeros_like() if need_grads else None
    dH = np.zeros_like(H) if need_grads else None
    pos = [i for i, lab in enumerate(mlm_labels) if lab != IGNORE]
    if not pos:
        return 0.0, dH, grads
    w = np.full(len(pos), 1.0 / len(pos))
    loss, dh, _ = mlm_rows_loss(params, H[pos], [mlm_labels[i] for i in pos], w, grads)
    if need_grads:
        dH[pos] += dh
    return loss, dH, grads


@dataclass
class LossBreakdown:
    """Batch-averaged losses; ``mrp`` and ``mlm`` already carry their weights."""

    total: float
    mrp: float
    mlm: float
    mrp_logliks: list[list[float]] = field(default_factory=list)
    mlm_logliks: list[np.ndarray] = field(default_factory=list)


def pad_batch(instances: Sequence[TrainingInstance], pad_id: int = 0):
    n = max(inst.seq_len for inst in instances)
    ids = np.full((len(instances), n), pad_id, dtype=np.int64)
    valid = np.zeros((len(instances), n), dtype=bool)
    for b, inst in enumerate(instances):
        ids[b, : inst.seq_len] = inst.input_ids
        valid[b, : inst.seq_len] = True
    return ids, valid


def batch_loss(
    params: ModelParams,
    instances: Sequence[TrainingInstance],
    weights: tuple[float, float] = (1.0, 1.0),
    need_grads: bool = True,
    rng: np.random.Generator | None = None,
):
    """Joint loss over a batch and (optionally) gradients for every parameter.

    Per instance, the MRP term is summed over its targets and the MLM term
    is the mean over its labelled positions; both are then averaged over
    the batch. A zero weight skips that term entirely.
    """
    w_mrp, w_mlm = weights
    B = len(instances)
    ids, valid = pad_batch(instances)
    out = forward(params, ids, valid, rng=rng)
    H = out.H
    grads = params.zeros_like() if need_grads else None
    dH = np.zeros_like(H) if need_grads else None

    mrp_sum = 0.0
    mrp_ll: list[list[float]] = []
    if w_mrp != 0.0:
        V = params["copy_v"]
        for b, inst in enumerate(instances):
            if not inst.mrp_targets:
                mrp_ll.append([])
                continue
            starts, ends = candidate_positions(inst)
            loss, dHb, dV, ll = mrp_loss(H[b], V, inst.mrp_targets, starts, ends, need_grads)
            mrp_sum += loss
            mrp_ll.append(ll)
            if need_grads:
                scale = w_mrp / B
                dH[b] += scale * dHb
                grads["copy_v"] += scale * dV

    mlm_sum = 0.0
    mlm_ll = []
    if w_mlm != 0.0:
        rows_b, rows_p, labels, rw = [], [], [], []
        for b, inst in enumerate(instances):
            pos = inst.masked_positions()
            for p in pos:
                rows_b.append(b)
                rows_p.append(p)
                labels.append(inst.mlm_labels[p])
                rw.append(w_mlm / (len(pos) * B))
        if rows_b:
            rb, rp = np.asarray(rows_b), np.asarray(rows_p)
            mlm_sum, dh, ll = mlm_rows_loss(params, H[rb, rp], labels, rw, grads)
            if need_grads:
                np.add.at(dH, (rb, rp), dh)
            for b in range(B):
                mlm_ll.append(ll[rb == b])
        # row weights carry both the batch average and w_mlm

    mrp = w_mrp * (mrp_sum / B) if w_mrp != 0.0 else 0.0
    mlm = mlm_sum
    breakdown = LossBreakdown(mrp + mlm, mrp, mlm, mrp_ll, mlm_ll)
    if need_grads:
        backward(params, out.cache, dH, grads)
    return breakdown, grads


def total_loss(instance: TrainingInstance, params: ModelParams, weights: tuple[float, float] = (1.0, 1.0)) -> LossBreakdown:
    breakdown, _ = batch_loss(params, [instance], weights, need_grads=False)
    return breakdown
