"""Attention exports and hidden-embedding dumps for trained models."""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .config import ConfigError
from .model import DataGap, find_gaps, forward, infer

log = logging.getLogger(__name__)


def minmax_columns(matrix):
    """Scale each column to [0, 1]; a constant column becomes all zeros."""
    m = np.asarray(matrix, dtype=np.float64)
    lo = m.min(axis=0)
    span = m.max(axis=0) - lo
    flat = span == 0
    if flat.any():
        log.info("%d constant attention column(s) normalized to 0", int(flat.sum()))
    out = (m - lo) / np.where(flat, 1.0, span)
    out[:, flat] = 0.0
    return out


def top_entries(block, k=100, skip_diagonal=True):
    """(i, j, value) of the k largest entries, ties broken by (i, j)."""
    block = np.asarray(block)
    n_rows, n_cols = block.shape
    ii, jj = np.meshgrid(np.arange(n_rows), np.arange(n_cols), indexing="ij")
    ii, jj, vals = ii.ravel(), jj.ravel(), block.ravel()
    if skip_diagonal:
        keep = ii != jj
        ii, jj, vals = ii[keep], jj[keep], vals[keep]
    order = np.lexsort((jj, ii, -vals))[:k]
    return [(int(ii[o]), int(jj[o]), float(vals[o])) for o in order]


@dataclass
class Explanation:
    triplet_id: str
    labels: list
    raw: np.ndarray  # N×N attention of the chosen layer/head(s)
    normalized: np.ndarray  # column-wise min-max of ``raw``
    atoms_a: list  # (atom index, symbol, score)
    atoms_b: list
    drug_gene_a: np.ndarray  # atoms of A × genes
    drug_gene_b: np.ndarray
    drug_drug_ab: np.ndarray  # atoms of A × atoms of B
    drug_drug_ba: np.ndarray
    top_gene_pairs: list  # (gene_i, gene_j, score, degree_i, degree_j)
    genes: list


def _atom_rows(labels, block, scores):
    rows = []
    for k, idx in enumerate(range(block.start, block.stop)):
        _, atom, symbol = labels[idx].split(":", 2)
        rows.append((int(atom), symbol, float(scores[k])))
    return rows


def explain(state, triplet, layer=-1, head=None, atom_mode="received", top_k=100, resources=None):
    """Attention exports for one triplet from a dropout-free forward pass.

    ``atom_mode="received"`` scores an atom by the mean normalized attention its
    column receives from the partner drug's rows; ``"given"`` uses the mean over
    the atom's own row restricted to the partner's columns.
    """
    if not state.config.uses_2d or state.config.n_encoder_layers == 0:
        raise ConfigError(f"variant {state.config.variant!r} has no attention layers to explain")
    if atom_mode not in ("received", "given"):
        raise ConfigError(f"atom_mode must be received or given, got {atom_mode!r}")
    res = state.resources.overlay(resources)
    gaps = find_gaps(state, res, [triplet])
    if gaps:
        raise DataGap(gaps)
    with ad.no_tape():
        _, _, _, record = forward(state, triplet, resources=res)
    raw = record.matrix(layer, head)
    norm = minmax_columns(raw)
    a, b, g = record.blocks()
    if atom_mode == "received":
        score_a = norm[b, a].mean(axis=0)
        score_b = norm[a, b].mean(axis=0)
    else:
        score_a = norm[a, b].mean(axis=1)
        score_b = norm[b, a].mean(axis=1)
    genes = record.labels[g]
    degree = res.ppi_degree if res.ppi_degree is not None else np.full(len(genes), -1)
    top = [(genes[i], genes[j], s, int(degree[i]), int(degree[j]))
           for i, j, s in top_entries(norm[g, g], top_k)]
    return Explanation(
        triplet.id, list(record.labels), raw, norm,
        _atom_rows(record.labels, a, score_a), _atom_rows(record.labels, b, score_b),
        norm[a, g], norm[b, g], norm[a, b], norm[b, a], top, list(genes),
    )


def _fmt(x):
    return repr(float(x))


def _matrix_csv(path, row_labels, col_labels, matrix):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["token", *col_labels])
        for label, row in zip(row_labels, matrix):
            w.writerow([label, *map(_fmt, row)])


def write_explanation(exp, out_dir):
    """One CSV per export; returns the written paths."""
    os.makedirs(out_dir, exist_ok=True)
    labels = exp.labels
    n_a, n_b = len(exp.atoms_a), len(exp.atoms_b)
    lab_a, lab_b = labels[:n_a], labels[n_a:n_a + n_b]
    paths = {}

    def target(name):
        paths[name] = os.path.join(out_dir, name)
        return paths[name]

    _matrix_csv(target("attention_raw.csv"), labels, labels, exp.raw)
    _matrix_csv(target("attention_normalized.csv"), labels, labels, exp.normalized)
    _matrix_csv(target("drug_gene_A.csv"), lab_a, exp.genes, exp.drug_gene_a)
    _matrix_csv(target("drug_gene_B.csv"), lab_b, exp.genes, exp.drug_gene_b)
    _matrix_csv(target("drug_drug_AB.csv"), lab_a, lab_b, exp.drug_drug_ab)
    _matrix_csv(target("drug_drug_BA.csv"), lab_b, lab_a, exp.drug_drug_ba)
    for name, rows in (("atom_importance_A.csv", exp.atoms_a), ("atom_importance_B.csv", exp.atoms_b)):
        with open(target(name), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["atom_index", "symbol", "score"])
            w.writerows([(i, s, _fmt(v)) for i, s, v in rows])
    with open(target("top_gene_pairs.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["gene_i", "gene_j", "score", "degree_i", "degree_j"])
        w.writerows([(gi, gj, _fmt(s), di, dj) for gi, gj, s, di, dj in exp.top_gene_pairs])
    return paths


def export_embeddings(state, triplets, out_dir, resources=None):
    """embeddings_512.csv and embeddings_32.csv: triplet id, label, hidden activations."""
    res = state.resources.overlay(resources)
    gaps = find_gaps(state, res, triplets)
    if gaps:
        raise DataGap(gaps)
    _, h1, h2 = infer(state, list(triplets), res)
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for hidden in (h1, h2):
        path = os.path.join(out_dir, f"embeddings_{hidden.shape[1]}.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["triplet_id", "label", *(f"h{i}" for i in range(hidden.shape[1]))])
            for t, row in zip(triplets, hidden):
                w.writerow([t.id, t.label, *map(_fmt, row)])
        paths.append(path)
    return paths
