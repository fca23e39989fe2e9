"""Acceptance gate: each test checks one criterion at its stated tolerance."""

import math
import time
from dataclasses import replace

import numpy as np

from corefkit.cli import main
from corefkit.corpus import build_instances, masking_stats
from corefkit.experiment import ExperimentConfig, run_learning_signal
from corefkit.masking import MaskingConfig, Mode, TrainingInstance
from corefkit.model import ModelConfig, init_params
from corefkit.objectives import batch_loss, candidate_positions, copy_distribution, mrp_loss, total_loss, word_copy_log_probs
from corefkit.synthetic import make_corpus
from corefkit.tokenizer import build_vocab
from corefkit.trainer import TrainConfig, read_metrics, train
from helpers import numeric_grad, random_instance, rel_error


def test_masking_statistics(criterion):
    t0 = time.perf_counter()
    stories = make_corpus(10_000, seed=0)
    vocab = build_vocab((" ".join(tw.word for tw in s) for s in stories), 700)
    instances = build_instances(stories, vocab, MaskingConfig(mode=Mode.FULL), seed=0, max_len=64, limit=10_000)
    stats = masking_stats(instances)
    seconds = time.perf_counter() - t0
    ok = (
        stats["instances"] == 10_000
        and abs(stats["masked_token_fraction"] - 0.15) <= 0.003
        and abs(stats["action_mask"] - 0.80) <= 0.01
        and abs(stats["action_random"] - 0.10) <= 0.01
        and abs(stats["action_keep"] - 0.10) <= 0.01
        and abs(stats["mrp_word_share"] - 0.20) <= 0.02
        and seconds < 60
    )
    detail = ", ".join(
        f"{k}={stats[k]:.4f}"
        for k in ("masked_token_fraction", "action_mask", "action_random", "action_keep", "mrp_word_share")
    )
    criterion(1, "masking statistics", ok, f"n={stats['instances']}, {detail}, {seconds:.1f}s")


def _brute_softmax(H, V, i, cands):
    scores = [math.fsum(V[c] * H[k][c] * H[i][c] for c in range(len(V))) for k in cands]
    top = max(scores)
    e = [math.exp(s - top) for s in scores]
    z = math.fsum(e)
    return [x / z for x in e]


def test_normalization_and_brute_force(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst_sum = worst_word = worst_loss = 0.0
    for _ in range(1000):
        n = int(rng.integers(5, 13))
        inst = random_instance(rng, 40, n, n_mrp=2 if n >= 10 else 1, n_mlm=0)
        d = int(rng.integers(1, 6))
        H = rng.normal(size=(n, d)) * rng.uniform(0.1, 3.0)
        V = rng.uniform(-1.0, 2.0, d)
        starts, ends = candidate_positions(inst)
        S, E = starts.tolist(), ends.tolist()
        Hl, Vl = H.tolist(), V.tolist()
        loss, *_ = mrp_loss(H, V, inst.mrp_targets, starts, ends, need_grads=False)
        ref_loss = 0.0
        for t in inst.mrp_targets:
            for q, cands in ((t.start, starts), (t.end, ends)):
                worst_sum = max(worst_sum, abs(copy_distribution(H, V, q, cands).sum() - 1.0))
            ps, pe = _brute_softmax(Hl, Vl, t.start, S), _brute_softmax(Hl, Vl, t.end, E)
            # every candidate word, enumerated independently of the vectorized path
            words = list(zip(S, E))
            ours = np.exp(word_copy_log_probs(H, V, (t.start, t.end), starts, ends))
            for j, (s, e) in enumerate(words):
                worst_word = max(worst_word, abs(ours[j] - ps[S.index(s)] * pe[E.index(e)]))
            ref_loss -= math.log(math.fsum(ps[S.index(s)] * pe[E.index(e)] for s, e in t.referents))
        worst_loss = max(worst_loss, abs(loss - ref_loss))
    seconds = time.perf_counter() - t0
    ok = max(worst_sum, worst_word, worst_loss) <= 1e-12 and seconds < 60
    criterion(
        2, "normalization and brute-force equivalence", ok,
        f"max |sum-1|={worst_sum:.2e}, max word diff={worst_word:.2e}, max loss diff={worst_loss:.2e}, {seconds:.1f}s",
    )


def test_full_gradient_check(criterion):
    t0 = time.perf_counter()
    cfg = ModelConfig(vocab_size=64, d_model=16, n_layers=2, n_heads=2, d_ff=64, max_positions=24)
    params = init_params(cfg, 3)
    rng = np.random.default_rng(17)
    for k in params.tensors:
        params.tensors[k] = params.tensors[k] + rng.normal(0, 0.1, params.tensors[k].shape)
    inst = random_instance(rng, 64, 24, n_mrp=2, n_mlm=3)
    assert inst.seq_len == 24 and inst.mrp_targets and inst.masked_positions()

    def f():
        return total_loss(inst, params).total

    _, grads = batch_loss(params, [inst])
    errors = {}
    for name, arr in params.tensors.items():
        errors[name] = rel_error(grads[name], numeric_grad(f, arr, h=1e-5))
    worst = max(errors, key=errors.get)
    seconds = time.perf_counter() - t0
    ok = errors[worst] < 1e-6 and "copy_v" in errors and seconds < 300
    criterion(
        3, "gradient check on every parameter", ok,
        f"{len(errors)} tensors, copy_v={errors['copy_v']:.2e}, worst {worst}={errors[worst]:.2e}, {seconds:.1f}s",
    )


def _pipeline(root, tag):
    out = root / tag
    common = ["--seed", "11", "--workers", "1"]
    assert main(["preprocess", "--corpus", str(root / "syn"), "--vocab", str(root / "voc"), "--out", str(out / "data"),
                 "--set", "max_len=64", "--set", "shard_size=40", *common]) == 0
    assert main(["train", "--data", str(out / "data"), "--out", str(out / "model"), "--set", "steps=30",
                 "--set", "batch_size=4", "--set", "d_model=16", "--set", "d_ff=32", "--set", "checkpoint_every=10",
                 *common]) == 0
    return out


def test_determinism(criterion, tmp_path):
    assert main(["synth", "--out", str(tmp_path / "syn"), "--set", "n_stories=80", "--set", "n_probe=10"]) == 0
    assert main(["build-vocab", "--corpus", str(tmp_path / "syn"), "--out", str(tmp_path / "voc"),
                 "--set", "vocab_size=250"]) == 0
    a, b = _pipeline(tmp_path, "a"), _pipeline(tmp_path, "b")
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    same = [f for f in files if (a / f).read_bytes() == (b / f).read_bytes()]
    kinds = {s: sum(1 for f in files if s in f.name) for s in ("shard", "ckpt", "model.bin", "metrics")}
    ok = len(files) == len(same) and all(kinds.values()) and files == sorted(
        p.relative_to(b) for p in b.rglob("*") if p.is_file())
    criterion(5, "bit-identical reruns", ok, f"{len(same)}/{len(files)} files identical, {kinds}")


def test_loss_accounting(criterion, tmp_path):
    stories = make_corpus(60, seed=5)
    vocab = build_vocab((" ".join(tw.word for tw in s) for s in stories), 250)
    data = build_instances(stories, vocab, MaskingConfig(), seed=5, max_len=64)
    model_cfg = ModelConfig(len(vocab), 16, 1, 2, 32, 64)
    res = train(data, model_cfg, TrainConfig(batch_size=4, steps=40, peak_lr=3e-3, seed=1), out_dir=tmp_path)
    rows = read_metrics(tmp_path / "metrics.csv")
    worst = max(abs(L - (mrp + mlm)) for _, _, L, mrp, mlm in rows)
    has_mrp = any(mrp > 0 for *_, mrp, _ in rows)

    # the pure-MLM trainer sees the same plans with the copy targets removed
    stripped = [
        TrainingInstance(i.input_ids, i.mlm_labels, i.actions, i.word_spans, [], i.eligible_groups) for i in data
    ]
    cfg = TrainConfig(batch_size=4, steps=40, peak_lr=3e-3, seed=1)
    weighted = train(data, model_cfg, replace(cfg, loss_weights=(0.0, 1.0)))
    pure = train(stripped, model_cfg, cfg)
    bit_exact = weighted.metrics == pure.metrics and all(
        weighted.params[k].tobytes() == pure.params[k].tobytes() for k in pure.params.tensors
    )
    ok = len(rows) == 40 and worst <= 1e-12 and has_mrp and bit_exact and res.metrics == rows
    criterion(6, "loss accounting", ok, f"{len(rows)} rows, max |L-(MRP+MLM)|={worst:.1e}, (0,1) bit-exact={bit_exact}")


def test_learning_signal(criterion):
    cfg = ExperimentConfig()
    r = run_learning_signal(cfg)
    margin = r["full_copy_acc"] - r["random_subword_mlm_acc"]
    ok = r["full_copy_acc"] >= 0.80 and margin >= 0.10 and r["seconds"] < 1800
    criterion(
        4, "learning signal on synthetic coreference", ok,
        f"copy acc@1 {r['copy_acc_init']:.3f} -> {r['full_copy_acc']:.3f}, "
        f"RANDOM_SUBWORD MLM acc@1 {r['random_subword_mlm_acc']:.3f}, margin {100 * margin:.1f}pp, "
        f"{r['n_sequences']} sequences, {r['seconds']:.0f}s",
    )
