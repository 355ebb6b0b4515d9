"""Cross-validate the full model (or any variant) under one or more split protocols.

With the O'Neil bundle and default widths this is the multi-hour headline run;
on a synthetic bundle it finishes in minutes.
"""

import argparse
import json
import logging
import os

from synfuse.config import Config
from synfuse.data import load_bundle, load_tissues
from synfuse.experiments import run_cv
from synfuse.splits import PROTOCOLS


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--bundle", required=True)
    ap.add_argument("--config", help="JSON config; defaults are used otherwise")
    ap.add_argument("--protocol", nargs="+", default=["kfold5"], choices=PROTOCOLS)
    ap.add_argument("--variant")
    ap.add_argument("--tissues", help="cell line -> tissue TSV for leave_tissue")
    ap.add_argument("--genes", type=int, help="expected gene-panel width (default: config n_genes)")
    ap.add_argument("--out-dir", default="cv_results")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    config = Config.load(args.config) if args.config else Config()
    if args.variant:
        config = config.replace(variant=args.variant)
    bundle = load_bundle(args.bundle, expected_genes=args.genes or config.n_genes, require_ppi=False)
    tissues = load_tissues(args.tissues) if args.tissues else None
    os.makedirs(args.out_dir, exist_ok=True)
    for protocol in args.protocol:
        result = run_cv(bundle, config, protocol, tissue_map=tissues,
                        log_dir=os.path.join(args.out_dir, f"{protocol}_logs"))
        stem = os.path.join(args.out_dir, f"{config.variant}_{protocol}")
        result.write(stem + ".csv", stem + ".json", {"config": config.to_dict()})
        print(protocol, json.dumps({k: [round(x, 4) for x in v] for k, v in result.summary.items()}))


if __name__ == "__main__":
    main()
