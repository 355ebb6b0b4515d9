"""Compare the four architecture variants under 5-fold cross-validation."""

import argparse
import csv
import logging

from synfuse.config import VARIANTS, Config
from synfuse.data import load_bundle
from synfuse.experiments import run_ablation


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--bundle", required=True)
    ap.add_argument("--config")
    ap.add_argument("--genes", type=int)
    ap.add_argument("--variants", nargs="+", default=list(VARIANTS), choices=VARIANTS)
    ap.add_argument("--out", default="ablation.csv")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    config = Config.load(args.config) if args.config else Config()
    bundle = load_bundle(args.bundle, expected_genes=args.genes or config.n_genes, require_ppi=False)
    rows = []
    for variant in args.variants:
        means, _ = run_ablation(bundle, variant, config)
        rows.append({"variant": variant, **means})
        print(variant, {k: round(v, 4) for k, v in means.items()})
    with open(args.out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)


if __name__ == "__main__":
    main()
