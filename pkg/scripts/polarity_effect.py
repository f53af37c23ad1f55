"""Baseline vs polarity blending on the diluted corpus, with paired per-seed deltas.

Takes 13 to 22 minutes for five seeds on one core.
"""

import argparse

from emopolar.metrics import format_table
from emopolar.model import BlendConfig
from emopolar.synthetic import diluted_corpus, fixture_lexicon
from emopolar.train import run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--blend", choices=("pooled-concat", "attention-keys"), default="pooled-concat")
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    data = diluted_corpus(0)
    lex = fixture_lexicon()
    base = run_experiment(data, "baseline", args.seeds, dataset_name="diluted", jobs=args.jobs)
    pol = run_experiment(data, "polarity", args.seeds, lexicon=lex, blend=BlendConfig(args.blend),
                         dataset_name="diluted", jobs=args.jobs)
    rows = [(f"baseline/seed-{s}", r.row()) for s, r in zip(args.seeds, base.reports)]
    rows += [(f"polarity/seed-{s}", r.row()) for s, r in zip(args.seeds, pol.reports)]
    print(format_table(rows))
    for s, b, p in zip(args.seeds, base.reports, pol.reports):
        print(f"seed {s}: baseline {b.macro:.4f}  polarity {p.macro:.4f}  delta {p.macro - b.macro:+.4f}")
    bm, pm = base.aggregate["macro_mean"], pol.aggregate["macro_mean"]
    print(f"mean macro-F1: baseline {bm:.4f} ± {base.aggregate['macro_std']:.4f}, "
          f"polarity {pm:.4f} ± {pol.aggregate['macro_std']:.4f}")


if __name__ == "__main__":
    main()
