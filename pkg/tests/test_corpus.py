import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from corefkit.corpus import (
    ShardError,
    ShardManifest,
    build_instances,
    decode_instance,
    derive_rng,
    encode_instance,
    load_manifest,
    pack_sequences,
    read_shard,
    read_shards,
    write_shard,
    write_shards,
)
from corefkit.masking import IGNORE, MaskingConfig, MRPTarget, TrainingInstance
from corefkit.mentions import TaggedWord
from corefkit.synthetic import make_corpus
from corefkit.tokenizer import SPECIAL_TOKENS, Vocab, build_vocab

VOCAB = Vocab(SPECIAL_TOKENS + ("w",))


def doc(n):
    return [TaggedWord("w", "NOUN")] * n


def test_packing_long_document_into_three():
    seqs = list(pack_sequences([doc(1200)], VOCAB, max_len=512, shorten_prob=0.0))
    assert [len(s) for s in seqs] == [510, 510, 180]


def test_short_document_single_sequence():
    seqs = list(pack_sequences([doc(5)], VOCAB, max_len=512, shorten_prob=0.0))
    assert len(seqs) == 1 and len(seqs[0]) == 5 and not seqs[0].shortened


def test_documents_never_share_a_sequence():
    seqs = list(pack_sequences([doc(3), doc(4)], VOCAB, max_len=512, shorten_prob=0.0))
    assert [len(s) for s in seqs] == [3, 4]


def test_words_are_never_split_across_sequences():
    v = Vocab(SPECIAL_TOKENS + ("a", "##b"))
    words = [TaggedWord("ab", "NOUN")] * 10
    seqs = list(pack_sequences([words], v, max_len=7, shorten_prob=0.0))
    assert [len(s) for s in seqs] == [4, 4, 4, 4, 4]


def test_shortening_rate_and_range():
    rng = np.random.default_rng(0)
    seqs = list(pack_sequences([doc(20000)], VOCAB, max_len=64, rng=rng, shorten_prob=0.1))
    body = seqs[:-1]  # the final piece of a document is whatever is left over
    assert abs(np.mean([s.shortened for s in body]) - 0.1) < 0.02
    for s in body:
        if s.shortened:
            assert 16 <= len(s) + 2 <= 64
        else:
            assert len(s) == 62
    assert len({len(s) for s in body if s.shortened}) > 20


def test_derive_rng_streams_independent():
    a = derive_rng(3, 1, 0).random(4)
    b = derive_rng(3, 1, 1).random(4)
    assert not np.array_equal(a, b)
    assert np.array_equal(a, derive_rng(3, 1, 0).random(4))


def sample_instances(n_stories=40, seed=0):
    stories = make_corpus(n_stories, seed)
    vocab = build_vocab((" ".join(t.word for t in s) for s in stories), 200)
    return build_instances(stories, vocab, MaskingConfig(), seed=seed, max_len=64)


def test_record_round_trip():
    for inst in sample_instances():
        assert decode_instance(encode_instance(inst)) == inst


def test_shard_round_trip_and_manifest(tmp_path):
    insts = sample_instances()
    m = write_shards(insts, tmp_path, shard_size=7, master_seed=9, fingerprint="abc", extra={"mode": "full"})
    assert m.total == len(insts) and len(m.shards) == -(-len(insts) // 7)
    assert list(read_shards(tmp_path)) == insts
    loaded = load_manifest(tmp_path)
    assert loaded == m and loaded.extra == {"mode": "full"}


def test_manifest_comments_and_errors():
    text = "# built by hand\nversion=1\nmaster_seed=4\nfingerprint=f\nnum_shards=1\nshard.0.path=a.bin\nshard.0.count=2\n"
    m = ShardManifest.loads(text)
    assert m.shards == ["a.bin"] and m.counts == [2] and m.master_seed == 4
    with pytest.raises(ShardError):
        ShardManifest.loads(text.replace("version=1", "version=2"))
    with pytest.raises(ShardError):
        ShardManifest.loads("garbage line\n")


def test_missing_manifest(tmp_path):
    with pytest.raises(FileNotFoundError, match="manifest not found"):
        load_manifest(tmp_path)


def test_truncated_shard(tmp_path):
    p = tmp_path / "s.bin"
    write_shard(p, sample_instances(10))
    p.write_bytes(p.read_bytes()[:-3])
    with pytest.raises(ShardError, match="truncated record"):
        list(read_shard(p))


def test_checksum_mismatch(tmp_path):
    p = tmp_path / "s.bin"
    write_shard(p, sample_instances(10))
    data = bytearray(p.read_bytes())
    data[20] ^= 0xFF
    p.write_bytes(bytes(data))
    with pytest.raises(ShardError, match="checksum mismatch"):
        list(read_shard(p))


def test_version_mismatch_and_bad_magic(tmp_path):
    p = tmp_path / "s.bin"
    write_shard(p, [])
    data = bytearray(p.read_bytes())
    data[4] = 9
    p.write_bytes(bytes(data))
    with pytest.raises(ShardError, match="version mismatch"):
        list(read_shard(p))
    p.write_bytes(b"NOPE\x01\x00")
    with pytest.raises(ShardError, match="bad magic"):
        list(read_shard(p))


def test_manifest_count_mismatch(tmp_path):
    write_shards(sample_instances(10), tmp_path, 1000, 0, "f")
    text = (tmp_path / "manifest.txt").read_text()
    count_line = [l for l in text.splitlines() if l.startswith("shard.0.count")][0]
    (tmp_path / "manifest.txt").write_text(text.replace(count_line, "shard.0.count=1"))
    with pytest.raises(ShardError, match="manifest says 1"):
        list(read_shards(tmp_path))


def test_build_is_deterministic(tmp_path):
    a = sample_instances(30, seed=4)
    b = sample_instances(30, seed=4)
    write_shards(a, tmp_path / "a", 10, 4, "f")
    write_shards(b, tmp_path / "b", 10, 4, "f")
    for name in ("shard-00000.bin", "shard-00001.bin", "manifest.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert sample_instances(30, seed=5) != a


ids_st = st.lists(st.integers(0, 2**32 - 2), min_size=2, max_size=40)


@settings(max_examples=80, deadline=None)
@given(ids=ids_st, data=st.data())
def test_encode_decode_arbitrary(ids, data):
    n = len(ids)
    labels = [data.draw(st.one_of(st.just(IGNORE), st.integers(0, 2**32 - 2))) for _ in ids]
    actions = [data.draw(st.integers(0, 3)) for _ in ids]
    spans = [(i, i) for i in range(1, n - 1)]
    targets = [MRPTarget(1, 1, ((2, 2),))] if n > 3 else []
    inst = TrainingInstance(ids, labels, actions, spans, targets, data.draw(st.integers(0, 500)))
    assert decode_instance(encode_instance(inst)) == inst
