"""Masking statistics of the synthetic corpus under each masking mode.

    python scripts/masking_stats.py --sequences 10000 --max-len 64
"""

import argparse
import json

from corefkit.corpus import build_instances, masking_stats
from corefkit.masking import MaskingConfig, Mode
from corefkit.synthetic import make_corpus
from corefkit.tokenizer import build_vocab


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sequences", type=int, default=10_000)
    ap.add_argument("--max-len", type=int, default=64)
    ap.add_argument("--vocab-size", type=int, default=700)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    # stories pack into slightly more than one sequence each
    stories = make_corpus(args.sequences, args.seed)
    vocab = build_vocab((" ".join(tw.word for tw in s) for s in stories), args.vocab_size)
    report = {}
    for mode in Mode:
        instances = build_instances(
            stories, vocab, MaskingConfig(mode=mode), args.seed, max_len=args.max_len, limit=args.sequences
        )
        report[mode.value] = masking_stats(instances)
    print(json.dumps(report, indent=2))


if __name__ == "__main__":
    main()
