"""Mini-batch Adam training with linear warmup and linear decay."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .masking import TrainingInstance
from .model import ModelConfig, ModelParams, init_params, save_checkpoint
from .objectives import batch_loss

log = logging.getLogger(__name__)

METRICS_HEADER = "step,lr,L,L_MRP,L_MLM"


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    steps: int = 2000
    peak_lr: float = 1e-3
    warmup_fraction: float = 0.2
    loss_weights: tuple[float, float] = (1.0, 1.0)  # (MRP, MLM)
    seed: int = 0
    checkpoint_every: int = 0  # 0: final checkpoint only
    clip_norm: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.batch_size <= 0 or self.steps <= 0:
            raise ValueError("batch_size and steps must be positive")
        if not 0.0 <= self.warmup_fraction <= 1.0:
            raise ValueError("warmup_fraction must be in [0, 1]")

    @property
    def warmup_steps(self) -> int:
        return int(round(self.warmup_fraction * self.steps))


def lr_at(step: int, cfg: TrainConfig) -> float:
    warm = cfg.warmup_steps
    if step < 0 or step >= cfg.steps:
        return 0.0
    if step < warm:
        return cfg.peak_lr * step / warm
    return cfg.peak_lr * (cfg.steps - step) / (cfg.steps - warm)


class Adam:
    def __init__(self, params: ModelParams, cfg: TrainConfig):
        self.cfg = cfg
        self.m = params.zeros_like()
        self.v = params.zeros_like()
        self.t = 0

    def step(self, params: ModelParams, grads: dict[str, np.ndarray], lr: float) -> None:
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1**self.t
        bc2 = 1.0 - c.beta2**self.t
        for k, p in params.tensors.items():
            g = grads[k]
            m = self.m[k]
            v = self.v[k]
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            if lr:
                p -= lr * (m / bc1) / (np.sqrt(v / bc2) + c.eps)


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def batch_order(n: int, batch_size: int, steps: int, rng: np.random.Generator):
    """Yield index batches from successive shuffled epochs."""
    perm = rng.permutation(n)
    pos = 0
    for _ in range(steps):
        idx = []
        while len(idx) < batch_size:
            if pos == n:
                perm = rng.permutation(n)
                pos = 0
            take = min(batch_size - len(idx), n - pos)
            idx.extend(perm[pos : pos + take].tolist())
            pos += take
        yield idx


@dataclass
class TrainResult:
    params: ModelParams
    metrics: list[tuple[int, float, float, float, float]]


def _format_row(row) -> str:
    step, lr, L, mrp, mlm = row
    return f"{step},{lr!r},{L!r},{mrp!r},{mlm!r}"


def train(
    dataset: Sequence[TrainingInstance],
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    out_dir=None,
    params: ModelParams | None = None,
) -> TrainResult:
    """Train on ``dataset``; writes ``metrics.csv`` and checkpoints into ``out_dir``.

    Everything random (initialization, batch order, dropout) is derived from
    ``cfg.seed``, so two runs with equal inputs produce equal bytes.
    """
    if not dataset:
        raise TrainingError("empty dataset")
    longest = max(inst.seq_len for inst in dataset)
    if longest > model_cfg.max_positions:
        raise TrainingError(f"instance length {longest} exceeds max_positions {model_cfg.max_positions}")
    root = np.random.SeedSequence(cfg.seed)
    init_seq, order_seq, drop_seq = root.spawn(3)
    if params is None:
        params = init_params(model_cfg, int(init_seq.generate_state(1)[0]))
    order_rng = np.random.default_rng(order_seq)
    drop_rng = np.random.default_rng(drop_seq) if model_cfg.dropout > 0 else None
    opt = Adam(params, cfg)

    out = Path(out_dir) if out_dir is not None else None
    metrics_fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        metrics_fh = open(out / "metrics.csv", "w", encoding="utf-8")
        metrics_fh.write(METRICS_HEADER + "\n")

    rows = []
    try:
        for step, idx in enumerate(batch_order(len(dataset), cfg.batch_size, cfg.steps, order_rng)):
            batch = [dataset[i] for i in idx]
            lr = lr_at(step, cfg)
            breakdown, grads = batch_loss(params, batch, cfg.loss_weights, rng=drop_rng)
            if not np.isfinite(breakdown.total):
                _dump_batch(out, step, idx, batch, breakdown)
                raise TrainingError(f"non-finite loss at step {step} (batch indices {idx})")
            clip_by_global_norm(grads, cfg.clip_norm)
            opt.step(params, grads, lr)
            row = (step, lr, breakdown.total, breakdown.mrp, breakdown.mlm)
            rows.append(row)
            if metrics_fh:
                metrics_fh.write(_format_row(row) + "\n")
            if step % 100 == 0:
                log.info("step %d lr %.2e L %.4f MRP %.4f MLM %.4f", *row)
            if out is not None and cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
                save_checkpoint(params, out / f"ckpt-{step + 1:06d}.bin")
    finally:
        if metrics_fh:
            metrics_fh.close()
    if out is not None:
        save_checkpoint(params, out / "model.bin")
    return TrainResult(params, rows)


def _dump_batch(out, step, idx, batch, breakdown) -> None:
    if out is None:
        return
    with open(out / f"nonfinite-step{step}.txt", "w", encoding="utf-8") as fh:
        fh.write(f"step={step} L={breakdown.total} L_MRP={breakdown.mrp} L_MLM={breakdown.mlm}\n")
        for i, inst in zip(idx, batch):
            fh.write(f"instance {i}: ids={inst.input_ids} labels={inst.mlm_labels} mrp={inst.mrp_targets}\n")


def read_metrics(path) -> list[tuple[int, float, float, float, float]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != METRICS_HEADER:
        raise ValueError(f"{path}: unexpected metrics header")
    rows = []
    for line in lines[1:]:
        s, lr, L, a, b = line.split(",")
        rows.append((int(s), float(lr), float(L), float(a), float(b)))
    return rows
