"""Corpus packing, instance materialization and the binary shard format.

Shard layout (all integers little-endian)::

    "CPK1" | u16 version
    repeated: u32 payload_len | payload | u32 crc32(payload)

    payload:
      u16 n                          sequence length incl. [CLS]/[SEP]
      n * u32 input_ids
      n * u32 mlm_labels             0xFFFFFFFF = ignore
      n * u8  actions
      u16 n_words, n_words * (u16 start, u16 end)
      u16 eligible_groups
      u16 n_mrp, n_mrp * (u16 start, u16 end, u16 n_ref, n_ref * (u16, u16))
"""

from __future__ import annotations

import hashlib
import struct
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .masking import IGNORE, Action, MaskingConfig, MRPTarget, TrainingInstance, apply_plan, sample_plan
from .mentions import TaggedWord, detect_mention_groups
from .tokenizer import TokenizedSequence, Vocab, WordSpan, tokenize_word

MAGIC = b"CPK1"
VERSION = 1
_NO_LABEL = 0xFFFFFFFF


class ShardError(RuntimeError):
    pass


def derive_rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-style rng stream keyed by ``(seed, *stream)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *stream])))


# stream ids for derive_rng
PACK_STREAM = 0
MASK_STREAM = 1


def pack_sequences(
    documents: Iterable[Sequence[TaggedWord]],
    vocab: Vocab,
    max_len: int = 512,
    rng: np.random.Generator | None = None,
    shorten_prob: float = 0.1,
    min_len: int = 16,
) -> Iterator[TokenizedSequence]:
    """Greedily pack whole words into sequences of at most ``max_len - 2`` subwords.

    Each new sequence is, with probability ``shorten_prob``, capped at a
    total length drawn uniformly from ``[min_len, max_len]`` instead. Packing
    restarts at every document boundary. A word longer than the cap on its
    own is replaced by ``[UNK]``.
    """
    if max_len < 3:
        raise ValueError("max_len must leave room for [CLS] and [SEP]")
    rng = rng if rng is not None else np.random.default_rng(0)
    min_len = min(min_len, max_len)

    def new_cap():
        if shorten_prob > 0 and rng.random() < shorten_prob:
            return int(rng.integers(min_len, max_len + 1)) - 2, True
        return max_len - 2, False

    for doc in documents:
        ids: list[int] = []
        spans: list[WordSpan] = []
        words: list[str] = []
        tags: list[str] = []
        cap, short = new_cap()
        for tw in doc:
            piece = tokenize_word(tw.word, vocab)
            if len(piece) > max(cap, 1):
                piece = [vocab.unk_id]
            if ids and len(ids) + len(piece) > cap:
                yield TokenizedSequence(ids, spans, words, tags, short)
                ids, spans, words, tags = [], [], [], []
                cap, short = new_cap()
                if len(piece) > max(cap, 1):
                    piece = [vocab.unk_id]
            spans.append(WordSpan(len(words), len(ids), len(ids) + len(piece) - 1))
            ids.extend(piece)
            words.append(tw.word)
            tags.append(tw.tag)
        if ids:
            yield TokenizedSequence(ids, spans, words, tags, short)


def make_instance(
    seq: TokenizedSequence, vocab: Vocab, cfg: MaskingConfig, rng: np.random.Generator
) -> TrainingInstance:
    tagged = [TaggedWord(w, t) for w, t in zip(seq.raw_words, seq.tags or ["OTHER"] * len(seq.raw_words))]
    groups = detect_mention_groups(tagged)
    plan = sample_plan(seq, groups, cfg, rng)
    eligible = sum(g.eligible for g in groups)
    return apply_plan(seq, plan, vocab, rng, eligible_groups=eligible)


def build_instances(
    documents: Iterable[Sequence[TaggedWord]],
    vocab: Vocab,
    cfg: MaskingConfig,
    seed: int,
    max_len: int = 512,
    shorten_prob: float = 0.1,
    limit: int | None = None,
) -> list[TrainingInstance]:
    """Pack documents and mask every sequence with its own derived rng stream."""
    out = []
    packer = pack_sequences(documents, vocab, max_len, derive_rng(seed, PACK_STREAM), shorten_prob)
    for i, seq in enumerate(packer):
        if limit is not None and i >= limit:
            break
        out.append(make_instance(seq, vocab, cfg, derive_rng(seed, MASK_STREAM, i)))
    return out


def config_fingerprint(cfg: MaskingConfig, vocab: Vocab, **extra) -> str:
    d = asdict(cfg)
    d["mode"] = cfg.mode.value
    items = sorted((k, repr(v)) for k, v in {**d, **extra}.items())
    blob = repr(items) + vocab.fingerprint()
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


# --- binary records ---------------------------------------------------------


def encode_instance(inst: TrainingInstance) -> bytes:
    n = inst.seq_len
    parts = [
        struct.pack("<H", n),
        np.asarray(inst.input_ids, dtype="<u4").tobytes(),
        np.asarray([_NO_LABEL if x == IGNORE else x for x in inst.mlm_labels], dtype="<u4").tobytes(),
        np.asarray(inst.actions, dtype="u1").tobytes(),
        struct.pack("<H", len(inst.word_spans)),
        np.asarray(inst.word_spans, dtype="<u2").reshape(-1).tobytes(),
        struct.pack("<HH", inst.eligible_groups, len(inst.mrp_targets)),
    ]
    for t in inst.mrp_targets:
        parts.append(struct.pack("<HHH", t.start, t.end, len(t.referents)))
        parts.append(np.asarray(t.referents, dtype="<u2").reshape(-1).tobytes())
    return b"".join(parts)


def decode_instance(buf: bytes) -> TrainingInstance:
    mv = memoryview(buf)
    off = 0

    def take(nbytes):
        nonlocal off
        if off + nbytes > len(mv):
            raise ShardError("truncated record")
        out = mv[off : off + nbytes]
        off += nbytes
        return out

    (n,) = struct.unpack("<H", take(2))
    ids = np.frombuffer(take(4 * n), dtype="<u4").tolist()
    labels = [IGNORE if x == _NO_LABEL else x for x in np.frombuffer(take(4 * n), dtype="<u4").tolist()]
    actions = np.frombuffer(take(n), dtype="u1").tolist()
    (nw,) = struct.unpack("<H", take(2))
    flat = np.frombuffer(take(4 * nw), dtype="<u2").tolist()
    spans = list(zip(flat[0::2], flat[1::2]))
    eligible, n_mrp = struct.unpack("<HH", take(4))
    targets = []
    for _ in range(n_mrp):
        s, e, k = struct.unpack("<HHH", take(6))
        rf = np.frombuffer(take(4 * k), dtype="<u2").tolist()
        targets.append(MRPTarget(s, e, tuple(zip(rf[0::2], rf[1::2]))))
    if off != len(mv):
        raise ShardError("record has trailing bytes")
    return TrainingInstance(ids, labels, actions, spans, targets, eligible)


def write_shard(path, instances: Iterable[TrainingInstance]) -> int:
    count = 0
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<H", VERSION))
        for inst in instances:
            payload = encode_instance(inst)
            fh.write(struct.pack("<I", len(payload)))
            fh.write(payload)
            fh.write(struct.pack("<I", zlib.crc32(payload)))
            count += 1
    return count


def read_shard(path) -> Iterator[TrainingInstance]:
    data = Path(path).read_bytes()
    if len(data) < 6 or data[:4] != MAGIC:
        raise ShardError(f"{path}: bad magic")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != VERSION:
        raise ShardError(f"{path}: version mismatch (file {version}, reader {VERSION})")
    off = 6
    while off < len(data):
        if off + 4 > len(data):
            raise ShardError(f"{path}: truncated record")
        (size,) = struct.unpack_from("<I", data, off)
        off += 4
        if off + size + 4 > len(data):
            raise ShardError(f"{path}: truncated record")
        payload = data[off : off + size]
        off += size
        (crc,) = struct.unpack_from("<I", data, off)
        off += 4
        if zlib.crc32(payload) != crc:
            raise ShardError(f"{path}: checksum mismatch")
        yield decode_instance(payload)


# --- manifest ---------------------------------------------------------------


@dataclass
class ShardManifest:
    shards: list[str]
    counts: list[int]
    master_seed: int
    fingerprint: str
    extra: dict[str, str] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(self.counts)

    def dumps(self) -> str:
        lines = [
            f"version={VERSION}",
            f"master_seed={self.master_seed}",
            f"fingerprint={self.fingerprint}",
            f"num_shards={len(self.shards)}",
        ]
        for i, (p, c) in enumerate(zip(self.shards, self.counts)):
            lines.append(f"shard.{i}.path={p}")
            lines.append(f"shard.{i}.count={c}")
        lines += [f"{k}={v}" for k, v in sorted(self.extra.items())]
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "ShardManifest":
        kv = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            k, sep, v = line.partition("=")
            if not sep:
                raise ShardError(f"malformed manifest line {line!r}")
            kv[k.strip()] = v.strip()
        if int(kv.pop("version", -1)) != VERSION:
            raise ShardError("manifest version mismatch")
        n = int(kv.pop("num_shards"))
        shards = [kv.pop(f"shard.{i}.path") for i in range(n)]
        counts = [int(kv.pop(f"shard.{i}.count")) for i in range(n)]
        return cls(shards, counts, int(kv.pop("master_seed")), kv.pop("fingerprint"), kv)


def write_shards(
    instances: Sequence[TrainingInstance],
    out_dir,
    shard_size: int,
    master_seed: int,
    fingerprint: str,
    extra: dict[str, str] | None = None,
) -> ShardManifest:
    """Write ``instances`` in order to ``shard-00000.bin``... plus ``manifest.txt``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if shard_size <= 0:
        raise ValueError("shard_size must be positive")
    names, counts = [], []
    for k, lo in enumerate(range(0, max(len(instances), 1), shard_size)):
        name = f"shard-{k:05d}.bin"
        counts.append(write_shard(out / name, instances[lo : lo + shard_size]))
        names.append(name)
    manifest = ShardManifest(names, counts, master_seed, fingerprint, dict(extra or {}))
    (out / "manifest.txt").write_text(manifest.dumps(), encoding="utf-8")
    return manifest


def load_manifest(path) -> ShardManifest:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.txt"
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    return ShardManifest.loads(path.read_text(encoding="utf-8"))


def read_shards(path) -> Iterator[TrainingInstance]:
    """Iterate instances of a manifest (file or its directory) in shard order."""
    path = Path(path)
    root = path if path.is_dir() else path.parent
    manifest = load_manifest(path)
    for name, expected in zip(manifest.shards, manifest.counts):
        got = 0
        for inst in read_shard(root / name):
            got += 1
            yield inst
        if got != expected:
            raise ShardError(f"{name}: manifest says {expected} instances, found {got}")


# --- statistics -------------------------------------------------------------


def masking_stats(instances: Iterable[TrainingInstance]) -> dict[str, float]:
    """Measured masking fractions over a set of instances.

    ``masked_token_fraction`` is over body tokens (excluding [CLS]/[SEP]);
    action fractions are over masked positions; ``mrp_word_share`` counts
    MRP targets among masked words, restricted to sequences that had at
    least one repeated-noun group.
    """
    body = masked = 0
    acts = {a: 0 for a in (Action.MASK, Action.RANDOM, Action.KEEP)}
    mrp_words = masked_words = 0
    n_inst = n_elig = 0
    for inst in instances:
        n_inst += 1
        body += inst.seq_len - 2
        for a in inst.actions:
            if a:
                masked += 1
                acts[Action(a)] += 1
        if inst.eligible_groups > 0:
            n_elig += 1
            mrp_words += len(inst.mrp_targets)
            lab = inst.mlm_labels
            masked_words += sum(1 for s, e in inst.word_spans if any(lab[p] != IGNORE for p in range(s, e + 1)))
    return {
        "instances": n_inst,
        "instances_with_eligible_groups": n_elig,
        "body_tokens": body,
        "masked_tokens": masked,
        "masked_token_fraction": masked / body if body else 0.0,
        "action_mask": acts[Action.MASK] / masked if masked else 0.0,
        "action_random": acts[Action.RANDOM] / masked if masked else 0.0,
        "action_keep": acts[Action.KEEP] / masked if masked else 0.0,
        "mrp_word_share": mrp_words / masked_words if masked_words else 0.0,
    }
