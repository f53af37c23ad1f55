"""Write the synthetic corpora, manifest stand-ins and the fixture lexicon to disk."""

import argparse
from pathlib import Path

from emopolar.data import GITHUB, STACKOVERFLOW, write_dataset
from emopolar.synthetic import diluted_corpus, fixture_lexicon_text, manifest_standin, separable_corpus


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="data")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(separable_corpus(args.seed), out / "separable.csv")
    write_dataset(diluted_corpus(args.seed), out / "diluted.csv")
    write_dataset(manifest_standin(GITHUB, args.seed), out / "github_standin.csv")
    write_dataset(manifest_standin(STACKOVERFLOW, args.seed), out / "stackoverflow_standin.jsonl", "jsonl")
    (out / "fixture_lexicon.txt").write_text(fixture_lexicon_text(), encoding="utf-8")
    for p in sorted(out.iterdir()):
        print(p)


if __name__ == "__main__":
    main()
