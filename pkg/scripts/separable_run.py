"""Baseline one-vs-all on the separable corpus, plus the 32-example overfit probe."""

import argparse
import time

from emopolar.synthetic import separable_corpus
from emopolar.train import overfit_probe, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    data = separable_corpus(args.seed)
    t0 = time.perf_counter()
    res = run_experiment(data, "baseline", [args.seed], dataset_name="separable")
    print(res.reports[0].to_table("baseline"))
    print(f"trained in {time.perf_counter() - t0:.0f}s")
    loss, log = overfit_probe(data[:32])
    print(f"overfit probe: loss {log[0]['train_loss']:.3f} -> {loss:.4f} after {len(log)} epochs")


if __name__ == "__main__":
    main()
