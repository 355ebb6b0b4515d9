"""Command-line entry point.

Exit codes: 0 success, 1 data error, 2 config error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys

from .config import Config, ConfigError
from .data import (
    DataError,
    PreprocessStats,
    TripletRecord,
    load_bundle,
    preprocess,
    read_genes,
    read_matrix,
    read_pairs,
    read_raw_scores,
    read_triplets,
    save_ppi_embedding,
    write_triplets,
)
from .experiments import ensure_ppi_embedding, evaluate_independent, run_cv
from .interpret import explain, export_embeddings, write_explanation
from .metrics import write_metrics_csv, write_metrics_json
from .model import DataGap, Resources, load_checkpoint, predict_batch, save_checkpoint, train
from .node2vec import Node2VecConfig, PpiNetwork, embed_network
from .smiles import SmilesError
from .splits import PROTOCOL_ALIASES, PROTOCOLS

log = logging.getLogger("synfuse")

EXIT_OK, EXIT_DATA, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def _config(args):
    config = Config.load(args.config) if getattr(args, "config", None) else Config()
    changes = {}
    if getattr(args, "variant", None):
        changes["variant"] = args.variant
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "drug_encoder", None):
        changes["drug_1d_encoder"] = "fallback" if args.drug_encoder == "fallback" else "precomputed"
    return config.replace(**changes) if changes else config


def _bundle(args, config):
    bundle = load_bundle(args.bundle, strict=not args.lenient, expected_genes=config.n_genes,
                         require_ppi=config.uses_2d)
    encoder = getattr(args, "drug_encoder", None)
    if encoder and encoder.startswith("precomputed:"):
        _, bundle.drug_embeddings = read_matrix(encoder.split(":", 1)[1], ("drug_id", "drug"))
    elif encoder and encoder not in ("fallback", "precomputed"):
        raise ConfigError(f"--drug-encoder must be fallback, precomputed or precomputed:FILE, got {encoder!r}")
    if bundle.dropped:
        log.warning("lenient load dropped %d triplet(s)", len(bundle.dropped))
    return bundle


def cmd_preprocess(args):
    try:
        pos, neg = (float(x) for x in args.thresholds.split(","))
    except ValueError:
        raise ConfigError(f"--thresholds wants 'positive,negative', got {args.thresholds!r}") from None
    malformed = []
    stats = PreprocessStats()
    triplets = preprocess(read_raw_scores(args.inp, malformed), pos, neg, stats)
    write_triplets(args.out, triplets)
    print(f"{len(triplets)} triplets ({stats.positive} positive, {stats.negative} negative); "
          f"dropped {stats.dropped_between} between thresholds, {len(malformed)} malformed rows")


def cmd_embed_ppi(args):
    pairs = read_pairs(args.ppi)
    genes = read_genes(args.genes) if args.genes else sorted({g for p in pairs for g in p})
    net = PpiNetwork.from_symbol_pairs(genes, pairs)
    n2v = Node2VecConfig(args.dim, args.p, args.q, args.walk_len, args.walks, args.window, args.negatives,
                         args.epochs)
    save_ppi_embedding(args.out, genes, embed_network(net, n2v, args.seed))
    print(f"embedded {len(genes)} genes ({len(net.edges)} edges) into {args.dim} dimensions")


def cmd_train(args):
    config = _config(args)
    bundle = _bundle(args, config)
    if config.uses_2d:
        ensure_ppi_embedding(bundle, config.seed, dim=config.model_dim)
    state = train(bundle, config, config.seed, args.log)
    save_checkpoint(state, args.out)
    last = state.history[-1] if state.history else {}
    print(f"trained {len(state.history)} epochs; final train loss {last.get('train_loss', float('nan')):.4f}; "
          f"saved {args.out}")


def cmd_cv(args):
    config = _config(args)
    bundle = _bundle(args, config)
    tissues = None
    if args.tissue_map:
        from .data import load_tissues

        tissues = load_tissues(args.tissue_map)
    result = run_cv(bundle, config, args.protocol, config.seed, tissues, log_dir=args.log_dir)
    json_path = args.json or os.path.splitext(args.out)[0] + ".json"
    result.write(args.out, json_path, {"fingerprint": config.fingerprint()})
    auroc = result.summary["auroc"]
    print(f"{result.protocol}: AUROC {auroc[0]:.4f} ± {auroc[1]:.4f}" if auroc[0] is not None
          else f"{result.protocol}: AUROC undefined")


def _model_bundle(args, state):
    return load_bundle(args.bundle, strict=not args.lenient, expected_genes=len(state.resources.genes),
                       require_ppi=False)


def cmd_eval(args):
    state = load_checkpoint(args.model)
    report = evaluate_independent(state, _model_bundle(args, state))
    write_metrics_csv(args.out, [report], ["independent"])
    write_metrics_json(os.path.splitext(args.out)[0] + ".json", [report], ["independent"])
    print(f"AUROC {report.auroc if report.auroc is not None else 'undefined'}")


def cmd_predict(args):
    state = load_checkpoint(args.model)
    extra = Resources.from_bundle(_model_bundle(args, state)) if args.bundle else None
    triplets = read_triplets(args.pairs)
    preds = predict_batch(state, triplets, extra)
    failed = 0
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["triplet_id", "drug_a", "drug_b", "cell_line", "prob_synergy", "prob_antagonism", "label", "error"])
        for t, p in zip(triplets, preds):
            if isinstance(p, DataGap):
                failed += 1
                w.writerow([t.id, t.drug_a, t.drug_b, t.cell_line, "", "", "", str(p)])
            else:
                w.writerow([t.id, t.drug_a, t.drug_b, t.cell_line, repr(p.prob_synergy), repr(p.prob_antagonism),
                            p.label, ""])
    print(f"{len(triplets) - failed} predictions written, {failed} row(s) with missing features")
    return EXIT_DATA if failed and failed == len(triplets) else EXIT_OK


def cmd_explain(args):
    state = load_checkpoint(args.model)
    parts = [p.strip() for p in args.triplet.split(",")]
    if len(parts) != 3:
        raise ConfigError(f"--triplet wants 'drugA,drugB,cellline', got {args.triplet!r}")
    head = None if args.head is None or args.head < 0 else args.head
    exp = explain(state, TripletRecord(*parts), args.layer, head, args.atom_mode, args.top)
    paths = write_explanation(exp, args.out_dir)
    print(f"wrote {len(paths)} files to {args.out_dir}")


def cmd_export_embeddings(args):
    state = load_checkpoint(args.model)
    bundle = _model_bundle(args, state)
    paths = export_embeddings(state, bundle.triplets, args.out_dir, Resources.from_bundle(bundle))
    print("wrote " + ", ".join(paths))


def build_parser():
    parser = argparse.ArgumentParser(prog="synfuse", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="average duplicate pairs and threshold raw synergy scores")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--thresholds", default="10,0", help="positive-above,negative-below")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("embed-ppi", help="node2vec embedding of a PPI edge list")
    p.add_argument("--ppi", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--genes", help="gene manifest; defaults to the sorted symbols of the edge list")
    p.add_argument("--seed", type=int, default=0)
    defaults = Node2VecConfig()
    p.add_argument("--dim", type=int, default=defaults.dim)
    p.add_argument("--p", type=float, default=defaults.p)
    p.add_argument("--q", type=float, default=defaults.q)
    p.add_argument("--walk-len", type=int, default=defaults.walk_len)
    p.add_argument("--walks", type=int, default=defaults.walks_per_node)
    p.add_argument("--window", type=int, default=defaults.window)
    p.add_argument("--negatives", type=int, default=defaults.negatives)
    p.add_argument("--epochs", type=int, default=defaults.epochs)
    p.set_defaults(func=cmd_embed_ppi)

    def bundle_args(p, config=True):
        p.add_argument("--bundle", required=True)
        p.add_argument("--lenient", action="store_true", help="drop unresolvable triplets instead of aborting")
        if config:
            p.add_argument("--config")
            p.add_argument("--seed", type=int)
            p.add_argument("--variant", choices=["full", "1d", "2d", "1d_only", "2d_only", "2d_no_trans"])
            p.add_argument("--drug-encoder", help="fallback | precomputed | precomputed:FILE.tsv")

    p = sub.add_parser("train", help="train one model on a bundle")
    bundle_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--log", help="per-epoch training log CSV")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("cv", help="cross-validate under a split protocol")
    bundle_args(p)
    p.add_argument("--protocol", required=True, choices=[*PROTOCOLS, *PROTOCOL_ALIASES])
    p.add_argument("--out", required=True)
    p.add_argument("--json")
    p.add_argument("--tissue-map")
    p.add_argument("--log-dir")
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("eval", help="score a trained model on an independent bundle")
    bundle_args(p, config=False)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="predict triplets listed in a CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--bundle", help="extra SMILES/expression for drugs or cell lines unseen in training")
    p.add_argument("--lenient", action="store_true")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("explain", help="attention exports for one triplet")
    p.add_argument("--model", required=True)
    p.add_argument("--triplet", required=True, help="drugA,drugB,cellline")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--layer", type=int, default=-1)
    p.add_argument("--head", type=int, help="head index; omit for the head average")
    p.add_argument("--atom-mode", choices=["received", "given"], default="received")
    p.add_argument("--top", type=int, default=100)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("export-embeddings", help="512- and 32-dim hidden activations per triplet")
    bundle_args(p, config=False)
    p.add_argument("--model", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_export_embeddings)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args) or EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, SmilesError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FloatingPointError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
