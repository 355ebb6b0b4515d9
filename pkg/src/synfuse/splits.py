"""Fold construction for k-fold CV and the leave-X-out protocols.

Each builder checks its own exclusion invariant before returning.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .data import MissingTissue

PROTOCOLS = ("kfold5", "leave_drug_combo", "leave_drug", "leave_cell_line", "leave_tissue")
PROTOCOL_ALIASES = {
    "ldco": "leave_drug_combo",
    "ldo": "leave_drug",
    "lclo": "leave_cell_line",
    "lto": "leave_tissue",
}


class SplitInvariantError(AssertionError):
    pass


@dataclass
class SplitPlan:
    protocol: str
    folds: list  # (train indices, test indices) as sorted int arrays
    held_out: list = field(default_factory=list)  # what each fold's test set is keyed on

    def __len__(self):
        return len(self.folds)

    def check_disjoint(self):
        for k, (train, test) in enumerate(self.folds):
            if np.intersect1d(train, test).size:
                raise SplitInvariantError(f"{self.protocol} fold {k}: train and test overlap")


def _plan(protocol, n, test_sets, held_out):
    everything = np.arange(n)
    folds = []
    for test in test_sets:
        test = np.unique(np.asarray(test, dtype=np.intp))
        folds.append((np.setdiff1d(everything, test), test))
    plan = SplitPlan(protocol, folds, held_out)
    plan.check_disjoint()
    return plan


def split_kfold5(triplets, seed=0, k=5):
    """Stratified by label: shuffle each class, then deal indices to folds round-robin."""
    n = len(triplets)
    if n < k:
        raise ValueError(f"need at least {k} triplets, got {n}")
    rng = np.random.default_rng(seed)
    labels = np.array([t.label for t in triplets])
    assignment = np.empty(n, dtype=np.intp)
    offset = 0
    for cls in sorted(set(labels.tolist())):
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(idx.size)]
        assignment[idx] = (np.arange(idx.size) + offset) % k
        offset = (offset + idx.size) % k
    tests = [np.flatnonzero(assignment == f) for f in range(k)]
    plan = _plan("kfold5", n, tests, [f"fold{f}" for f in range(k)])
    covered = np.sort(np.concatenate([t for _, t in plan.folds]))
    if not np.array_equal(covered, np.arange(n)):
        raise SplitInvariantError("kfold5 test folds do not partition the data")
    return plan


def rank_by_count(keys):
    """Keys sorted by descending count, ties broken lexicographically."""
    counts = Counter(keys)
    return sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))


def split_leave_drug_combo(triplets, n_pairs=15, n_groups=5):
    """Top-15 unordered pairs by triplet count, chunked in rank order into 5 groups of 3."""
    ranked = rank_by_count([t.pair for t in triplets])
    if len(ranked) < n_pairs:
        raise ValueError(f"need at least {n_pairs} distinct drug pairs, got {len(ranked)}")
    top = [pair for pair, _ in ranked[:n_pairs]]
    size = n_pairs // n_groups
    groups = [top[g * size:(g + 1) * size] for g in range(n_groups)]
    tests = [[i for i, t in enumerate(triplets) if t.pair in set(group)] for group in groups]
    plan = _plan("leave_drug_combo", len(triplets), tests, groups)
    for (train, _), group in zip(plan.folds, groups):
        if any(triplets[i].pair in set(group) for i in train):
            raise SplitInvariantError("held-out drug pair found in training set")
    return plan


def split_leave_drug(triplets, n_folds=5):
    ranked = rank_by_count([d for t in triplets for d in (t.drug_a, t.drug_b)])
    if len(ranked) < n_folds:
        raise ValueError(f"need at least {n_folds} distinct drugs, got {len(ranked)}")
    drugs = [d for d, _ in ranked[:n_folds]]
    tests = [[i for i, t in enumerate(triplets) if drug in (t.drug_a, t.drug_b)] for drug in drugs]
    plan = _plan("leave_drug", len(triplets), tests, drugs)
    for (train, _), drug in zip(plan.folds, drugs):
        if any(drug in (triplets[i].drug_a, triplets[i].drug_b) for i in train):
            raise SplitInvariantError(f"held-out drug {drug} found in training set")
    return plan


def split_leave_cell_line(triplets, n_folds=5):
    ranked = rank_by_count([t.cell_line for t in triplets])
    if len(ranked) < n_folds:
        raise ValueError(f"need at least {n_folds} distinct cell lines, got {len(ranked)}")
    cells = [c for c, _ in ranked[:n_folds]]
    tests = [[i for i, t in enumerate(triplets) if t.cell_line == cell] for cell in cells]
    plan = _plan("leave_cell_line", len(triplets), tests, cells)
    for (train, _), cell in zip(plan.folds, cells):
        if any(triplets[i].cell_line == cell for i in train):
            raise SplitInvariantError(f"held-out cell line {cell} found in training set")
    return plan


def split_leave_tissue(triplets, tissue_map, n_folds=5):
    missing = {t.cell_line for t in triplets if t.cell_line not in tissue_map}
    if missing:
        raise MissingTissue(missing)
    ranked = rank_by_count([tissue_map[t.cell_line] for t in triplets])
    if len(ranked) < n_folds:
        raise ValueError(f"need at least {n_folds} distinct tissues, got {len(ranked)}")
    tissues = [x for x, _ in ranked[:n_folds]]
    tests = [[i for i, t in enumerate(triplets) if tissue_map[t.cell_line] == tissue] for tissue in tissues]
    plan = _plan("leave_tissue", len(triplets), tests, tissues)
    for (train, _), tissue in zip(plan.folds, tissues):
        if any(tissue_map[triplets[i].cell_line] == tissue for i in train):
            raise SplitInvariantError(f"held-out tissue {tissue} found in training set")
    return plan


def make_plan(protocol, triplets, seed=0, tissue_map=None):
    protocol = PROTOCOL_ALIASES.get(protocol, protocol)
    if protocol == "kfold5":
        return split_kfold5(triplets, seed)
    if protocol == "leave_drug_combo":
        return split_leave_drug_combo(triplets)
    if protocol == "leave_drug":
        return split_leave_drug(triplets)
    if protocol == "leave_cell_line":
        return split_leave_cell_line(triplets)
    if protocol == "leave_tissue":
        if tissue_map is None:
            raise MissingTissue({t.cell_line for t in triplets})
        return split_leave_tissue(triplets, tissue_map)
    raise ValueError(f"unknown protocol {protocol!r}; expected one of {PROTOCOLS}")


def stratified_holdout(labels, fraction, rng):
    """Split indices into (train, validation) keeping the label mix; fraction 0 gives no validation."""
    labels = np.asarray(labels)
    val = []
    if fraction > 0:
        for cls in sorted(set(labels.tolist())):
            idx = np.flatnonzero(labels == cls)
            idx = idx[rng.permutation(idx.size)]
            take = int(round(fraction * idx.size))
            val.extend(idx[:take].tolist())
    val = np.array(sorted(val), dtype=np.intp)
    train = np.setdiff1d(np.arange(labels.size), val)
    return train, val
