"""Write a synthetic dataset bundle (triplets, SMILES, expression, PPI, tissues) to a directory."""

import argparse

from synfuse.data import save_bundle
from synfuse.synthetic import SyntheticSpec, make_bundle


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out")
    ap.add_argument("--drugs", type=int, default=12)
    ap.add_argument("--cells", type=int, default=10)
    ap.add_argument("--genes", type=int, default=32)
    ap.add_argument("--triplets", type=int, default=200)
    ap.add_argument("--embed-dim", type=int, default=128)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    spec = SyntheticSpec(n_drugs=args.drugs, n_cells=args.cells, n_genes=args.genes,
                         n_triplets=args.triplets, embed_dim=args.embed_dim, seed=args.seed)
    bundle = make_bundle(spec)
    save_bundle(args.out, bundle)
    print(f"wrote {len(bundle.triplets)} triplets over {len(bundle.genes)} genes to {args.out}")


if __name__ == "__main__":
    main()
