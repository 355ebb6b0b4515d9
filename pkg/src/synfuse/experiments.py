"""Cross-validation, ablation and independent-dataset drivers."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .config import Config
from .data import PPI_EMBEDDING, DataError, save_ppi_embedding
from .metrics import compute_metrics, summarize, write_metrics_csv, write_metrics_json
from .model import Resources, synergy_scores, train
from .node2vec import Node2VecConfig, embed_network
from .splits import make_plan

log = logging.getLogger(__name__)


def ensure_ppi_embedding(bundle, seed=0, n2v=None, dim=128, cache=True):
    """Train node2vec on the bundle's PPI network unless an embedding is already attached.

    With ``cache`` the result is written next to the bundle so later runs reuse it.
    """
    if bundle.ppi_embedding is not None:
        return bundle.ppi_embedding
    if bundle.ppi is None:
        raise DataError("bundle has neither a PPI edge list nor a cached PPI embedding")
    n2v = n2v or Node2VecConfig(dim=dim)
    log.info("training node2vec on %d genes / %d edges", len(bundle.ppi), len(bundle.ppi.edges))
    bundle.ppi_embedding = embed_network(bundle.ppi, n2v, seed)
    if cache and bundle.root:
        save_ppi_embedding(os.path.join(bundle.root, PPI_EMBEDDING), bundle.genes, bundle.ppi_embedding)
    return bundle.ppi_embedding


def fold_seed(seed, fold):
    return int(np.random.SeedSequence([seed, fold]).generate_state(1)[0])


@dataclass
class CvResult:
    protocol: str
    reports: list
    held_out: list
    fold_names: list
    states: list = field(default_factory=list)

    @property
    def summary(self):
        return summarize(self.reports)

    def write(self, csv_path, json_path=None, extra=None):
        write_metrics_csv(csv_path, self.reports, self.fold_names)
        if json_path:
            doc = {"protocol": self.protocol, "held_out": [str(h) for h in self.held_out]}
            doc.update(extra or {})
            write_metrics_json(json_path, self.reports, self.fold_names, doc)


def run_cv(bundle, config=None, protocol="kfold5", seed=None, tissue_map=None, keep_states=False,
           log_dir=None):
    """Train and score one model per fold of ``protocol``."""
    config = config or Config()
    seed = config.seed if seed is None else seed
    if config.uses_2d:
        ensure_ppi_embedding(bundle, seed, dim=config.model_dim)
    plan = make_plan(protocol, bundle.triplets, seed, tissue_map or bundle.tissues)
    resources = Resources.from_bundle(bundle)
    if log_dir:
        os.makedirs(log_dir, exist_ok=True)
    reports, states, names = [], [], []
    for k, (train_idx, test_idx) in enumerate(plan.folds):
        log.info("%s fold %d: %d train / %d test", plan.protocol, k, len(train_idx), len(test_idx))
        fold_bundle = bundle.subset(train_idx)
        log_path = os.path.join(log_dir, f"fold{k}_log.csv") if log_dir else None
        state = train(fold_bundle, config, fold_seed(seed, k), log_path, resources)
        test = [bundle.triplets[i] for i in test_idx]
        scores = synergy_scores(state, test)
        reports.append(compute_metrics(scores, [t.label for t in test]))
        names.append(f"fold{k}")
        if keep_states:
            states.append(state)
    return CvResult(plan.protocol, reports, plan.held_out, names, states)


def run_ablation(bundle, variant, config=None, protocol="kfold5", seed=None):
    """Cross-validated metrics of one architecture variant; returns (mean-metric dict, CvResult)."""
    config = (config or Config()).replace(variant=variant)
    result = run_cv(bundle, config, protocol, seed)
    return {k: v[0] for k, v in result.summary.items()}, result


def evaluate_independent(state, bundle):
    """Score a trained model on another dataset (its own SMILES and expression rows apply)."""
    scores = synergy_scores(state, bundle.triplets, Resources.from_bundle(bundle))
    return compute_metrics(scores, [t.label for t in bundle.triplets])
