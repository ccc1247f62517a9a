#!/usr/bin/env python3
"""Generate a self-contained run directory: vocabulary, manifest, config.

The tree is fully deterministic for a given seed, so it can be regenerated
anywhere and fed straight to the ``renewal`` command line.
"""

from __future__ import annotations

import argparse
from pathlib import Path

from renewal.fixtures import (
    build_fixture_manifest,
    make_sphere_vocabulary,
    write_oracle_config,
    write_vocabulary,
)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True, help="directory to create the tree in")
    parser.add_argument("--upd", type=int, default=6, help="records with detected disorder")
    parser.add_argument("--no-upd", type=int, default=2, help="records without (gated)")
    parser.add_argument("--vocab-size", type=int, default=300, help="vocabulary word count")
    parser.add_argument("--dim", type=int, default=3, help="embedding dimensionality")
    parser.add_argument("--seed", type=int, default=0, help="global seed for all fixtures")
    parser.add_argument("--budget", type=int, default=20, help="optimizer evaluation budget")
    args = parser.parse_args()

    root = Path(args.out)
    vocab = make_sphere_vocabulary(args.vocab_size, dim=args.dim, seed=args.seed)
    write_vocabulary(vocab, root / "vocab.txt")
    manifest = build_fixture_manifest(
        root, upd_records=args.upd, no_upd_records=args.no_upd, seed=args.seed
    )
    config = write_oracle_config(root, seed=args.seed, budget=args.budget)

    print(f"vocabulary: {root / 'vocab.txt'} ({len(vocab)} words, dim {vocab.dim})")
    print(f"manifest:   {manifest} ({args.upd} + {args.no_upd} records)")
    print(f"config:     {config}")
    print()
    print("try:")
    print(f"  renewal batch --config {config} --manifest {manifest} --out {root / 'out'}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
