"""Overfit check: train the full model on a small balanced synthetic set until train accuracy reaches 0.99."""

import argparse
import math
import time

from synfuse import autodiff as ad
from synfuse.config import Config
from synfuse.model import forward_rows, train
from synfuse.synthetic import SyntheticSpec, make_bundle


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--genes", type=int, default=32, help="978 reproduces the full panel (much slower)")
    ap.add_argument("--triplets", type=int, default=200)
    ap.add_argument("--max-epochs", type=int, default=500)
    ap.add_argument("--log", help="per-epoch CSV log")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    bundle = make_bundle(SyntheticSpec(n_genes=args.genes, n_triplets=args.triplets, seed=args.seed))
    config = Config(n_genes=args.genes, drug_1d_encoder="fallback", val_fraction=0.0, max_epochs=args.max_epochs,
                    patience=10**6, stop_at_train_accuracy=0.99)
    initial = train(bundle, config.replace(max_epochs=0), seed=args.seed)
    with ad.no_tape():
        probs, _, _, _ = forward_rows(initial, bundle.triplets)
    loss = ad.cross_entropy(probs, [t.label for t in bundle.triplets]).item()
    print(f"initial loss {loss:.4f} (ln 2 = {math.log(2):.4f})")

    start = time.perf_counter()
    state = train(bundle, config, seed=args.seed, log_path=args.log)
    last = state.history[-1]
    print(f"epoch {last['epoch']}: train loss {last['train_loss']:.4f}, train acc {last['train_acc']:.3f}, "
          f"{time.perf_counter() - start:.0f}s")


if __name__ == "__main__":
    main()
