"""Command-line entry point: ``corefkit <subcommand> [flags]``.

Settings come from defaults, then a flat ``key = value`` config file
(``--config``), then ``COREFKIT_SEED``, then command-line flags. Exit codes:
0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from . import corpus as corpus_mod
from .masking import IGNORE, MaskingConfig, Mode
from .mentions import TaggedWord, TaggingError, heuristic_tag, parse_tagged_line
from .model import ModelConfig, load_checkpoint
from .probe import (
    ProbeError,
    encoded_length,
    evaluate_disambiguation,
    evaluate_mlm_recovery,
    evaluate_recovery,
    read_probe_file,
)
from .tokenizer import Vocab, VocabError, build_vocab
from .trainer import TrainConfig, TrainingError, train

log = logging.getLogger("corefkit")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
VOCAB_FILE = "vocab.txt"
PROBE_FILE = "probe.tsv"


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


# key -> (type, default)
KEYS: dict[str, tuple[type, object]] = {
    "seed": (int, 0),
    "workers": (int, 1),
    "mode": (str, "full"),
    "budget_fraction": (float, 0.15),
    "mlm_ratio": (float, 4.0),
    "mrp_ratio": (float, 1.0),
    "action_mask": (float, 0.8),
    "action_random": (float, 0.1),
    "action_keep": (float, 0.1),
    "max_len": (int, 128),
    "shorten_prob": (float, 0.1),
    "shard_size": (int, 1000),
    "vocab_size": (int, 700),
    "tagger": (str, "auto"),
    "d_model": (int, 64),
    "n_layers": (int, 2),
    "n_heads": (int, 2),
    "d_ff": (int, 128),
    "dropout": (float, 0.0),
    "batch_size": (int, 16),
    "steps": (int, 2000),
    "peak_lr": (float, 1e-3),
    "warmup_fraction": (float, 0.2),
    "mrp_weight": (float, 1.0),
    "mlm_weight": (float, 1.0),
    "checkpoint_every": (int, 0),
    "clip_norm": (float, 1.0),
    "probe_mode": (str, "recover"),
    "n_stories": (int, 10_000),
    "n_probe": (int, 500),
    "limit": (int, 10),
    "corpus": (str, ""),
    "vocab": (str, ""),
    "data": (str, ""),
    "model": (str, ""),
    "probe": (str, ""),
    "out": (str, ""),
}


@dataclass
class RunConfig:
    values: dict

    def __getattr__(self, name):
        try:
            return self.__dict__["values"][name]
        except KeyError:
            raise AttributeError(name) from None

    def masking(self) -> MaskingConfig:
        return MaskingConfig(
            budget_fraction=self.budget_fraction,
            mlm_to_mrp_word_ratio=(self.mlm_ratio, self.mrp_ratio),
            action_split=(self.action_mask, self.action_random, self.action_keep),
            mode=Mode(self.mode),
        )

    def training(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size, steps=self.steps, peak_lr=self.peak_lr,
            warmup_fraction=self.warmup_fraction, loss_weights=(self.mrp_weight, self.mlm_weight),
            seed=self.seed, checkpoint_every=self.checkpoint_every, clip_norm=self.clip_norm,
        )

    def model(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(
            vocab_size=vocab_size, d_model=self.d_model, n_layers=self.n_layers,
            n_heads=self.n_heads, d_ff=self.d_ff, max_positions=self.max_len, dropout=self.dropout,
        )


def _convert(key: str, raw: str):
    if key not in KEYS:
        raise UsageError(f"unknown key {key!r}; valid keys: {', '.join(sorted(KEYS))}")
    typ = KEYS[key][0]
    try:
        val = typ(raw)
    except ValueError:
        raise UsageError(f"bad value for {key}: {raw!r} (expected {typ.__name__})") from None
    if key == "seed" and not 0 <= val < 2**64:
        raise UsageError("seed must be an unsigned 64-bit value")
    if key == "mode" and val not in {m.value for m in Mode}:
        raise UsageError(f"mode must be one of {[m.value for m in Mode]}")
    return val


def parse_config_text(text: str) -> dict:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise UsageError(f"config line {n}: expected key = value")
        key = key.strip()
        out[key] = _convert(key, val.strip())
    return out


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = {k: d for k, (_, d) in KEYS.items()}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise DataError(f"config file not found: {path}")
        values.update(parse_config_text(path.read_text(encoding="utf-8")))
    env_seed = os.environ.get("COREFKIT_SEED")
    if env_seed is not None:
        values["seed"] = _convert("seed", env_seed)
    for item in args.set or []:
        key, sep, val = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        values[key.strip()] = _convert(key.strip(), val.strip())
    for key in ("seed", "mode", "workers", "out", "corpus", "vocab", "data", "model", "probe", "limit"):
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = _convert(key, str(flag))
    return RunConfig(values)


def _require(cfg: RunConfig, key: str, must_exist: bool = True) -> Path:
    raw = cfg.values[key]
    if not raw:
        raise UsageError(f"missing required path --{key}")
    path = Path(raw)
    if must_exist and not path.exists():
        raise DataError(f"{key} path does not exist: {path}")
    return path


# --- corpus reading ---------------------------------------------------------


def read_documents(root: Path, tagger: str = "auto") -> list[list[TaggedWord]]:
    """Documents from ``*.txt`` files under ``root``; blank lines split documents."""
    files = sorted(root.glob("*.txt")) if root.is_dir() else [root]
    if not files:
        raise DataError(f"no .txt files in {root}")
    docs: list[list[TaggedWord]] = []
    for f in files:
        cur: list[TaggedWord] = []
        for line in f.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                if cur:
                    docs.append(cur)
                    cur = []
                continue
            cur.extend(_tag_line(line, tagger))
        if cur:
            docs.append(cur)
    return docs


def _tag_line(line: str, tagger: str) -> list[TaggedWord]:
    if tagger == "pretagged" or (tagger == "auto" and all("/" in t for t in line.split())):
        return parse_tagged_line(line)
    if tagger not in ("auto", "heuristic"):
        raise UsageError(f"tagger must be auto, pretagged or heuristic, not {tagger!r}")
    return [TaggedWord(w, heuristic_tag(w)) for w in line.split()]


def _load_vocab(path: Path) -> Vocab:
    f = path / VOCAB_FILE if path.is_dir() else path
    if not f.exists():
        raise DataError(f"vocab file not found: {f}")
    return Vocab.load(f)


# --- subcommands ------------------------------------------------------------


def cmd_synth(cfg: RunConfig) -> int:
    from .probe import write_probe_file
    from .synthetic import make_corpus, make_recovery_probe, to_tagged_line

    out = _require(cfg, "out", must_exist=False)
    out.mkdir(parents=True, exist_ok=True)
    stories = make_corpus(cfg.n_stories, cfg.seed)
    (out / "corpus.txt").write_text("".join(to_tagged_line(s) + "\n\n" for s in stories), encoding="utf-8")
    write_probe_file(out / PROBE_FILE, make_recovery_probe(cfg.n_probe, cfg.seed + 1))
    print(f"wrote {len(stories)} stories and {cfg.n_probe} probe items to {out}")
    return EXIT_OK


def cmd_build_vocab(cfg: RunConfig) -> int:
    docs = read_documents(_require(cfg, "corpus"), cfg.tagger)
    out = _require(cfg, "out", must_exist=False)
    out.mkdir(parents=True, exist_ok=True)
    vocab = build_vocab((" ".join(tw.word for tw in d) for d in docs), cfg.vocab_size)
    vocab.save(out / VOCAB_FILE)
    print(f"wrote {len(vocab)} entries to {out / VOCAB_FILE}")
    return EXIT_OK


def _mask_chunk(job):
    seqs, start, vocab_entries, mcfg, seed = job
    vocab = Vocab(vocab_entries)
    return [
        corpus_mod.make_instance(s, vocab, mcfg, corpus_mod.derive_rng(seed, corpus_mod.MASK_STREAM, start + i))
        for i, s in enumerate(seqs)
    ]


def cmd_preprocess(cfg: RunConfig) -> int:
    docs = read_documents(_require(cfg, "corpus"), cfg.tagger)
    vocab = _load_vocab(_require(cfg, "vocab"))
    out = _require(cfg, "out", must_exist=False)
    mcfg = cfg.masking()
    seqs = list(corpus_mod.pack_sequences(
        docs, vocab, cfg.max_len, corpus_mod.derive_rng(cfg.seed, corpus_mod.PACK_STREAM), cfg.shorten_prob
    ))
    chunk = max(1, -(-len(seqs) // max(cfg.workers, 1)))
    jobs = [(seqs[i : i + chunk], i, vocab.entries, mcfg, cfg.seed) for i in range(0, len(seqs), chunk)]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(cfg.workers) as ex:
            parts = list(ex.map(_mask_chunk, jobs))
    else:
        parts = [_mask_chunk(j) for j in jobs]
    instances = [inst for part in parts for inst in part]
    fp = corpus_mod.config_fingerprint(mcfg, vocab, max_len=cfg.max_len, shorten_prob=cfg.shorten_prob)
    manifest = corpus_mod.write_shards(
        instances, out, cfg.shard_size, cfg.seed, fp,
        extra={"mode": mcfg.mode.value, "max_len": str(cfg.max_len), "vocab_fingerprint": vocab.fingerprint()},
    )
    vocab.save(out / VOCAB_FILE)
    print(f"wrote {manifest.total} instances in {len(manifest.shards)} shards to {out}")
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    data = _require(cfg, "data")
    corpus_mod.load_manifest(data)
    vocab = _load_vocab(_require(cfg, "vocab") if cfg.vocab else data)
    out = _require(cfg, "out", must_exist=False)
    instances = list(corpus_mod.read_shards(data))
    result = train(instances, cfg.model(len(vocab)), cfg.training(), out_dir=out)
    vocab.save(out / VOCAB_FILE)
    last = result.metrics[-1]
    print(f"trained {len(result.metrics)} steps; final L={last[2]:.4f} L_MRP={last[3]:.4f} L_MLM={last[4]:.4f}")
    return EXIT_OK


def cmd_probe(cfg: RunConfig) -> int:
    model_path = _require(cfg, "model")
    ckpt = model_path / "model.bin" if model_path.is_dir() else model_path
    if not ckpt.exists():
        raise DataError(f"checkpoint not found: {ckpt}")
    params = load_checkpoint(ckpt)
    vocab = _load_vocab(_require(cfg, "vocab") if cfg.vocab else (model_path if model_path.is_dir() else model_path.parent))
    probe_path = _require(cfg, "probe")
    pf = probe_path / PROBE_FILE if probe_path.is_dir() else probe_path
    if not pf.exists():
        raise DataError(f"probe file not found: {pf}")
    if cfg.probe_mode not in ("recover", "disambiguate"):
        raise UsageError(f"probe_mode must be recover or disambiguate, not {cfg.probe_mode!r}")
    items = read_probe_file(pf, cfg.probe_mode)
    # disambiguation fills can be longer than the passage; recovery passages are fixed
    fitting = [it for it in items if encoded_length(it, vocab) <= params.cfg.max_positions]
    if cfg.probe_mode == "recover":
        rep = evaluate_recovery(params, vocab, fitting)
        report = {"items": rep.n, "accuracy_at_1": rep.accuracy, "mrr": rep.mrr,
                  "mlm_argmax_accuracy": evaluate_mlm_recovery(params, vocab, fitting)}
    else:
        report = {"items": len(fitting), "accuracy": evaluate_disambiguation(params, vocab, fitting)}
    report["skipped_too_long"] = len(items) - len(fitting)
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_inspect(cfg: RunConfig) -> int:
    data = _require(cfg, "data")
    vocab = None
    if cfg.vocab or (data / VOCAB_FILE).exists():
        vocab = _load_vocab(_require(cfg, "vocab") if cfg.vocab else data)

    def tok(i):
        return vocab.entries[i] if vocab else str(i)

    for k, inst in enumerate(corpus_mod.read_shards(data)):
        if k >= cfg.limit:
            break
        print(f"# instance {k}  n={inst.seq_len}  eligible_groups={inst.eligible_groups}")
        print("input : " + " ".join(tok(i) for i in inst.input_ids))
        masked = [f"{p}:{tok(inst.mlm_labels[p])}" for p in range(inst.seq_len) if inst.mlm_labels[p] != IGNORE]
        print("labels: " + " ".join(masked))
        for t in inst.mrp_targets:
            print(f"mrp   : ({t.start},{t.end}) <- {list(t.referents)}")
    return EXIT_OK


def cmd_stats(cfg: RunConfig) -> int:
    stats = corpus_mod.masking_stats(corpus_mod.read_shards(_require(cfg, "data")))
    print(json.dumps(stats, indent=2, sort_keys=True))
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "build-vocab": cmd_build_vocab,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "probe": cmd_probe,
    "inspect": cmd_inspect,
    "stats": cmd_stats,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--mode", choices=[m.value for m in Mode])
    common.add_argument("--workers", type=int)
    common.add_argument("--out")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    common.add_argument("-v", "--verbose", action="store_true")
    paths = {
        "synth": (),
        "build-vocab": ("corpus",),
        "preprocess": ("corpus", "vocab"),
        "train": ("data", "vocab"),
        "probe": ("model", "vocab", "probe"),
        "inspect": ("data", "vocab", "limit"),
        "stats": ("data",),
    }
    parser = _Parser(prog="corefkit", description="coreference-aware masked LM pretraining toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, keys in paths.items():
        p = sub.add_parser(name, parents=[common])
        for k in keys:
            p.add_argument(f"--{k}")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError, corpus_mod.ShardError, VocabError, TaggingError, ProbeError, TrainingError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
