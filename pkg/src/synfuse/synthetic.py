"""Synthetic bundles with a planted, learnable synergy rule.

Real screening data is not shipped; these bundles have the same file layout
and a label that depends on both the drug pair and the cell line, so every
code path (and the ablation variants) has something to learn.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import DatasetBundle, TripletRecord
from .node2vec import PpiNetwork

# (name, SMILES) of anticancer agents common in combination screens
DRUG_LIBRARY = (
    ("5-FU", "O=c1[nH]cc(F)c(=O)[nH]1"),
    ("ABT-888", "CC1(CCCN1)c1nc2c(C(N)=O)cccc2[nH]1"),
    ("ERLOTINIB", "COCCOc1cc2ncnc(Nc3cccc(C#C)c3)c2cc1OCCOC"),
    ("METFORMIN", "CN(C)C(=N)N=C(N)N"),
    ("TEMOZOLOMIDE", "Cn1nnc2c(C(N)=O)ncn2c1=O"),
    ("GEMCITABINE", "NC1=NC(=O)N(C=C1)C1OC(CO)C(O)C1(F)F"),
    ("CYCLOPHOSPHAMIDE", "ClCCN(CCCl)P1(=O)NCCCO1"),
    ("METHOTREXATE", "CN(Cc1cnc2nc(N)nc(N)c2n1)c1ccc(cc1)C(=O)NC(CCC(O)=O)C(O)=O"),
    ("VORINOSTAT", "ONC(=O)CCCCCCC(=O)Nc1ccccc1"),
    ("SORAFENIB", "CNC(=O)c1cc(Oc2ccc(NC(=O)Nc3ccc(Cl)c(c3)C(F)(F)F)cc2)ccn1"),
    ("LAPATINIB", "CS(=O)(=O)CCNCc1ccc(o1)-c1ccc2ncnc(Nc3ccc(OCc4cccc(F)c4)c(Cl)c3)c2c1"),
    ("DASATINIB", "Cc1nc(Nc2ncc(s2)C(=O)Nc2c(C)cccc2Cl)cc(n1)N1CCN(CCO)CC1"),
    ("PD325901", "OCC(O)CONC(=O)c1ccc(F)c(F)c1Nc1ccc(I)cc1F"),
    ("BORTEZOMIB", "CC(C)CC(NC(=O)C(Cc1ccccc1)NC(=O)c1cnccn1)B(O)O"),
    ("SUNITINIB", "CCN(CC)CCNC(=O)c1c(C)[nH]c(/C=C2\\C(=O)Nc3ccc(F)cc23)c1C"),
    ("CARBOPLATIN", "O=C1O[Pt](N)(N)OC(=O)C12CCC2"),
    ("TOPOTECAN", "CCC1(O)C(=O)OCc2c1cc1-c3nc4ccc(O)c(CN(C)C)c4cc3Cn1c2=O"),
    ("DEXAMETHASONE", "C[C@@H]1C[C@H]2[C@@H]3CCC4=CC(=O)C=C[C@]4(C)[C@@]3(F)[C@@H](O)C[C@]2(C)[C@@]1(O)C(=O)CO"),
    ("ASPIRIN", "CC(=O)Oc1ccccc1C(=O)O"),
    ("CAFFEINE", "Cn1cnc2c1c(=O)n(C)c(=O)n2C"),
)

TISSUES = ("lung", "skin", "intestine", "ovary", "breast", "prostate", "pleura", "brain")


@dataclass
class SyntheticSpec:
    n_drugs: int = 12
    n_cells: int = 10
    n_genes: int = 32
    n_triplets: int = 200
    ppi_degree: int = 3
    embed_dim: int = 128
    seed: int = 0


def gene_symbols(n):
    return [f"G{i:04d}" for i in range(n)]


def tissue_assignment(n_cells):
    """Cell-line → tissue with the first five tissues most populous."""
    weights = (6, 5, 4, 3, 2, 1, 1, 1)
    counts = [0] * len(TISSUES)
    out = []
    for _ in range(n_cells):
        # highest-averages apportionment keeps every prefix close to the weight ratios
        k = max(range(len(TISSUES)), key=lambda i: (weights[i] / (counts[i] + 1), -i))
        counts[k] += 1
        out.append(TISSUES[k])
    return out


def make_bundle(spec=None, with_embedding=True):
    """Build an in-memory bundle; labels are balanced by thresholding at the median."""
    spec = spec or SyntheticSpec()
    if spec.n_drugs > len(DRUG_LIBRARY):
        raise ValueError(f"at most {len(DRUG_LIBRARY)} synthetic drugs available")
    rng = np.random.default_rng(spec.seed)
    drugs = DRUG_LIBRARY[: spec.n_drugs]
    drug_ids = [name for name, _ in drugs]
    cells = [f"CL{i:02d}" for i in range(spec.n_cells)]
    genes = gene_symbols(spec.n_genes)

    # planted structure: each drug hits a gene program, each cell line expresses programs
    drug_latent = rng.normal(size=(spec.n_drugs, 4))
    cell_latent = rng.normal(size=(spec.n_cells, 4))
    loadings = rng.normal(size=(4, spec.n_genes))
    expression = {c: cell_latent[i] @ loadings + 0.3 * rng.normal(size=spec.n_genes) for i, c in enumerate(cells)}

    pairs = [(a, b) for a in range(spec.n_drugs) for b in range(a + 1, spec.n_drugs)]
    keys = [(a, b, c) for a, b in pairs for c in range(spec.n_cells)]
    chosen = rng.choice(len(keys), size=min(spec.n_triplets, len(keys)), replace=False)
    raw = []
    for k in sorted(chosen):
        a, b, c = keys[k]
        score = (drug_latent[a] * drug_latent[b]) @ cell_latent[c] + 0.5 * (drug_latent[a] + drug_latent[b]) @ cell_latent[c]
        raw.append((a, b, c, score))
    median = float(np.median([s for *_, s in raw]))
    triplets = []
    for a, b, c, s in raw:
        first, second = (a, b) if rng.random() < 0.5 else (b, a)
        score = float(10.0 + 20.0 * (s - median)) if s > median else float(-20.0 * (median - s) - 1e-3)
        triplets.append(TripletRecord(drug_ids[first], drug_ids[second], cells[c], int(s > median), score))

    edges = set()
    for i in range(spec.n_genes):
        for j in rng.choice(spec.n_genes, size=spec.ppi_degree, replace=False):
            if i != j:
                edges.add((min(i, int(j)), max(i, int(j))))
    ppi = PpiNetwork(genes, sorted(edges))
    embedding = None
    if with_embedding:
        embedding = 0.5 * rng.normal(size=(spec.n_genes, spec.embed_dim))
    tissues = dict(zip(cells, tissue_assignment(spec.n_cells)))
    return DatasetBundle(triplets, dict(drugs), expression, genes, ppi, embedding, None, tissues)
