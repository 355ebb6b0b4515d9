"""Triplet preprocessing and bundle loading.

Bundle directory layout (CSV/TSV, header row required, '#' comment lines allowed)::

    triplets.csv          drug_a,drug_b,cell_line,label[,synergy_score]
    drugs.tsv             drug_id  smiles
    expression.tsv        cell_line_id  <one column per gene>
    genes.txt             gene manifest, one symbol per line (sorted order is canonical)
    ppi_edges.tsv         gene_a  gene_b
    ppi_embedding.tsv     gene  d0 .. d127           (optional cache; see ``embed-ppi``)
    drug_embeddings.tsv   drug_id  v0 .. v767        (optional precomputed 1D vectors)
    tissues.tsv           cell_line  tissue          (optional)
"""

from __future__ import annotations

import csv
import logging
import math
import os
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .node2vec import PpiNetwork

log = logging.getLogger(__name__)

TRIPLETS = "triplets.csv"
DRUGS = "drugs.tsv"
EXPRESSION = "expression.tsv"
GENES = "genes.txt"
PPI_EDGES = "ppi_edges.tsv"
PPI_EMBEDDING = "ppi_embedding.tsv"
DRUG_EMBEDDINGS = "drug_embeddings.tsv"
TISSUES = "tissues.tsv"


class DataError(Exception):
    """Base for problems with input data (CLI exit code 1)."""


class FileMissing(DataError):
    pass


class SchemaError(DataError):
    pass


class IntegrityError(DataError):
    def __init__(self, message, offenders=()):
        super().__init__(message)
        self.offenders = list(offenders)


class MalformedRow(DataError):
    def __init__(self, line, message):
        super().__init__(f"line {line}: {message}")
        self.line = line


class MissingTissue(DataError):
    def __init__(self, cell_lines):
        super().__init__(f"no tissue for cell lines: {', '.join(sorted(cell_lines))}")
        self.cell_lines = sorted(cell_lines)


@dataclass(frozen=True)
class TripletRecord:
    drug_a: str
    drug_b: str
    cell_line: str
    label: int | None = None
    synergy_score: float | None = None

    def __post_init__(self):
        if self.drug_a == self.drug_b:
            raise ValueError(f"triplet pairs {self.drug_a!r} with itself")

    @property
    def id(self):
        return f"{self.drug_a}|{self.drug_b}|{self.cell_line}"

    @property
    def pair(self):
        return tuple(sorted((self.drug_a, self.drug_b)))

    def swapped(self):
        return TripletRecord(self.drug_b, self.drug_a, self.cell_line, self.label, self.synergy_score)


# ---------------------------------------------------------------- tabular IO


def _rows(path, delimiter):
    """Yield (line_number, fields) skipping blank and '#' lines; the first yielded row is the header."""
    if not os.path.exists(path):
        raise FileMissing(f"missing file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            yield lineno, next(csv.reader([line.rstrip("\r\n")], delimiter=delimiter))


def read_table(path, delimiter=None, check_width=True):
    """Return (header, [(line, fields)]); by default every row must match the header's width."""
    if delimiter is None:
        delimiter = "\t" if path.endswith((".tsv", ".txt")) else ","
    rows = _rows(path, delimiter)
    try:
        _, header = next(rows)
    except StopIteration:
        raise SchemaError(f"{path}: no header row") from None
    header = [h.strip() for h in header]
    body = []
    for lineno, fields in rows:
        if check_width and len(fields) != len(header):
            raise SchemaError(f"{path}:{lineno}: expected {len(header)} columns, found {len(fields)}")
        body.append((lineno, [f.strip() for f in fields]))
    return header, body


def _column(header, names, path):
    for name in names:
        if name in header:
            return header.index(name)
    raise SchemaError(f"{path}: none of the columns {names} present (header: {header})")


def _fmt(x):
    return repr(float(x))


def write_table(path, header, rows, delimiter=None):
    if delimiter is None:
        delimiter = "\t" if path.endswith(".tsv") else ","
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def read_matrix(path, key_names, width=None):
    """Read ``key + floats`` rows into {key: vector}; returns (header, mapping)."""
    header, body = read_table(path)
    if width is not None and len(header) - 1 != width:
        raise SchemaError(f"{path}: expected {width} value columns, found {len(header) - 1}")
    if header[0] not in key_names:
        raise SchemaError(f"{path}: first column must be one of {key_names}, found {header[0]!r}")
    out = {}
    for lineno, fields in body:
        try:
            out[fields[0]] = np.array([float(x) for x in fields[1:]])
        except ValueError as exc:
            raise SchemaError(f"{path}:{lineno}: non-numeric value ({exc})") from None
    return header, out


def write_matrix(path, key_name, keys, matrix, prefix="v"):
    matrix = np.asarray(matrix)
    header = [key_name] + [f"{prefix}{i}" for i in range(matrix.shape[1])]
    write_table(path, header, [[k, *map(_fmt, row)] for k, row in zip(keys, matrix)])


# ---------------------------------------------------------------- preprocessing

_A_NAMES = ("drug_a", "drug_a_name", "drug1", "drug_row", "drugA")
_B_NAMES = ("drug_b", "drug_b_name", "drug2", "drug_col", "drugB")
_CELL_NAMES = ("cell_line", "cell_line_name", "cell", "cell_line_id")
_SCORE_NAMES = ("synergy_score", "synergy", "score", "synergy_loewe")


def read_raw_scores(path, malformed=None):
    """Parse a raw score table into (drug_a, drug_b, cell_line, score) tuples.

    Rows with a non-numeric score are skipped, logged with their line number and
    appended to ``malformed`` when a list is given.
    """
    header, body = read_table(path)
    ia = _column(header, _A_NAMES, path)
    ib = _column(header, _B_NAMES, path)
    ic = _column(header, _CELL_NAMES, path)
    iscore = _column(header, _SCORE_NAMES, path)
    records = []
    for lineno, fields in body:
        try:
            score = float(fields[iscore])
            if not math.isfinite(score):
                raise ValueError(fields[iscore])
        except ValueError:
            if malformed is not None:
                malformed.append(MalformedRow(lineno, f"non-numeric score {fields[iscore]!r}"))
            log.warning("skipping %s line %d: non-numeric score %r", path, lineno, fields[iscore])
            continue
        records.append((fields[ia], fields[ib], fields[ic], score))
    return records


@dataclass
class PreprocessStats:
    groups: int = 0
    positive: int = 0
    negative: int = 0
    dropped_between: int = 0
    dropped_self_pairs: int = 0


def preprocess(records, positive_above=10.0, negative_below=0.0, stats=None):
    """Average duplicate (unordered pair, cell line) scores and threshold them.

    ``records`` holds (drug_a, drug_b, cell_line, score) tuples or TripletRecords with
    a score.  Averages above ``positive_above`` become label 1, below
    ``negative_below`` label 0, the rest are dropped.  Output pairs are in sorted
    drug order, rows sorted by (cell_line, drug_a, drug_b).
    """
    stats = stats if stats is not None else PreprocessStats()
    sums = defaultdict(float)
    counts = defaultdict(int)
    order = {}
    for rec in records:
        if isinstance(rec, TripletRecord):
            a, b, cell, score = rec.drug_a, rec.drug_b, rec.cell_line, rec.synergy_score
        else:
            a, b, cell, score = rec
        if score is None:
            raise ValueError(f"record {a}|{b}|{cell} has no synergy score")
        if a == b:
            stats.dropped_self_pairs += 1
            continue
        key = (cell, *sorted((a, b)))
        sums[key] += float(score)
        counts[key] += 1
        order.setdefault(key, len(order))
    out = []
    for key in sorted(sums):
        cell, a, b = key
        avg = sums[key] / counts[key]
        if avg > positive_above:
            label = 1
            stats.positive += 1
        elif avg < negative_below:
            label = 0
            stats.negative += 1
        else:
            stats.dropped_between += 1
            continue
        out.append(TripletRecord(a, b, cell, label, avg))
    stats.groups = len(sums)
    log.info(
        "preprocess: %d groups -> %d triplets (%d positive, %d negative); dropped %d between thresholds, %d self-pairs",
        stats.groups, len(out), stats.positive, stats.negative, stats.dropped_between, stats.dropped_self_pairs,
    )
    return out


def read_triplets(path):
    header, body = read_table(path)
    ia = _column(header, _A_NAMES, path)
    ib = _column(header, _B_NAMES, path)
    ic = _column(header, _CELL_NAMES, path)
    il = header.index("label") if "label" in header else None
    iscore = next((header.index(n) for n in _SCORE_NAMES if n in header), None)
    out = []
    for lineno, fields in body:
        try:
            label = int(fields[il]) if il is not None and fields[il] != "" else None
            score = float(fields[iscore]) if iscore is not None and fields[iscore] != "" else None
            if label not in (None, 0, 1):
                raise ValueError(f"label {label}")
            out.append(TripletRecord(fields[ia], fields[ib], fields[ic], label, score))
        except ValueError as exc:
            raise SchemaError(f"{path}:{lineno}: {exc}") from None
    return out


def write_triplets(path, triplets):
    rows = [
        [t.drug_a, t.drug_b, t.cell_line, "" if t.label is None else t.label,
         "" if t.synergy_score is None else _fmt(t.synergy_score)]
        for t in triplets
    ]
    write_table(path, ["drug_a", "drug_b", "cell_line", "label", "synergy_score"], rows)


# ---------------------------------------------------------------- bundle


@dataclass
class DatasetBundle:
    triplets: list
    smiles: dict
    expression: dict  # cell line -> raw vector in ``genes`` order
    genes: list
    ppi: PpiNetwork | None = None
    ppi_embedding: np.ndarray | None = None
    drug_embeddings: dict | None = None
    tissues: dict | None = None
    root: str | None = None
    dropped: list = field(default_factory=list)

    def subset(self, indices):
        sub = DatasetBundle(**{**self.__dict__})
        sub.triplets = [self.triplets[i] for i in indices]
        return sub

    @property
    def drugs(self):
        return sorted({d for t in self.triplets for d in (t.drug_a, t.drug_b)})

    @property
    def cell_lines(self):
        return sorted({t.cell_line for t in self.triplets})


def read_genes(path):
    genes = []
    for _, fields in _rows(path, "\t"):
        genes.append(fields[0].strip())
    if genes and genes[0].lower() in ("gene", "gene_symbol", "symbol"):
        genes = genes[1:]
    return genes


def load_expression(path, genes=None, expected=None):
    header, body = read_table(path, check_width=False)
    columns = header[1:]
    if genes is None:
        genes = sorted(columns)
    if expected is not None and len(columns) != expected:
        raise SchemaError(f"{path}: expression rows must have {expected} gene values, found {len(columns)}")
    missing = sorted(set(genes) - set(columns))
    if missing:
        raise SchemaError(f"{path}: genes absent from expression header: {', '.join(missing[:10])}")
    pos = [columns.index(g) for g in genes]
    out = {}
    for lineno, fields in body:
        if len(fields) - 1 != len(columns):
            raise SchemaError(
                f"{path}:{lineno}: cell line {fields[0]!r} has {len(fields) - 1} expression values, "
                f"expected {len(columns)}"
            )
        try:
            values = np.array([float(x) for x in fields[1:]])
        except ValueError as exc:
            raise SchemaError(f"{path}:{lineno}: non-numeric expression ({exc})") from None
        out[fields[0]] = values[pos]
    return genes, out


def read_pairs(path):
    header, body = read_table(path)
    return [(f[0], f[1]) for _, f in body]


def load_bundle(root, strict=True, expected_genes=978, require_ppi=True):
    """Read a bundle directory and enforce cross-references.

    Strict mode raises IntegrityError listing every unresolvable reference;
    lenient mode drops the offending triplets and records them in ``dropped``.
    """
    path = lambda name: os.path.join(root, name)  # noqa: E731
    genes = read_genes(path(GENES)) if os.path.exists(path(GENES)) else None
    if genes is not None:
        if genes != sorted(genes):
            raise SchemaError(f"{path(GENES)}: gene manifest must be lexicographically sorted")
        if len(set(genes)) != len(genes):
            raise SchemaError(f"{path(GENES)}: duplicate gene symbols")
        if expected_genes is not None and len(genes) != expected_genes:
            raise SchemaError(f"{path(GENES)}: expected {expected_genes} genes, found {len(genes)}")
    genes, expression = load_expression(path(EXPRESSION), genes, expected_genes)

    smiles = {}
    header, body = read_table(path(DRUGS))
    for _, fields in body:
        smiles[fields[0]] = fields[1]

    triplets = read_triplets(path(TRIPLETS))
    ppi = None
    if os.path.exists(path(PPI_EDGES)):
        ppi = PpiNetwork.from_symbol_pairs(genes, read_pairs(path(PPI_EDGES)))
    elif require_ppi and not os.path.exists(path(PPI_EMBEDDING)):
        raise FileMissing(f"missing file: {path(PPI_EDGES)} (or a cached {PPI_EMBEDDING})")
    ppi_embedding = load_ppi_embedding(path(PPI_EMBEDDING), genes) if os.path.exists(path(PPI_EMBEDDING)) else None
    drug_embeddings = None
    if os.path.exists(path(DRUG_EMBEDDINGS)):
        _, drug_embeddings = read_matrix(path(DRUG_EMBEDDINGS), ("drug_id", "drug"))
    tissues = load_tissues(path(TISSUES)) if os.path.exists(path(TISSUES)) else None

    bundle = DatasetBundle(triplets, smiles, expression, genes, ppi, ppi_embedding, drug_embeddings, tissues, root)
    return check_integrity(bundle, strict)


def check_integrity(bundle, strict=True):
    bad_drugs = set()
    bad_cells = set()
    keep = []
    dropped = []
    for t in bundle.triplets:
        missing = [d for d in (t.drug_a, t.drug_b) if d not in bundle.smiles]
        cell_missing = t.cell_line not in bundle.expression
        bad_drugs.update(missing)
        if cell_missing:
            bad_cells.add(t.cell_line)
        if missing or cell_missing:
            dropped.append(t)
        else:
            keep.append(t)
    if dropped and strict:
        parts = []
        if bad_drugs:
            parts.append(f"unknown drugs: {', '.join(sorted(bad_drugs))}")
        if bad_cells:
            parts.append(f"cell lines without expression: {', '.join(sorted(bad_cells))}")
        raise IntegrityError("; ".join(parts), sorted(bad_drugs) + sorted(bad_cells))
    if dropped:
        log.warning("dropped %d triplets with unresolvable references", len(dropped))
    bundle.triplets = keep
    bundle.dropped = dropped
    return bundle


def load_ppi_embedding(path, genes):
    _, table = read_matrix(path, ("gene", "gene_symbol"))
    missing = [g for g in genes if g not in table]
    if missing:
        raise SchemaError(f"{path}: no embedding for genes {', '.join(missing[:10])}")
    return np.stack([table[g] for g in genes])


def save_ppi_embedding(path, genes, embedding):
    write_matrix(path, "gene", genes, embedding, prefix="d")


def load_tissues(path):
    header, body = read_table(path)
    return {f[0]: f[1] for _, f in body}


def save_bundle(root, bundle):
    """Write a bundle directory (used by the synthetic-data script and tests)."""
    os.makedirs(root, exist_ok=True)
    write_triplets(os.path.join(root, TRIPLETS), bundle.triplets)
    write_table(os.path.join(root, DRUGS), ["drug_id", "smiles"], sorted(bundle.smiles.items()))
    with open(os.path.join(root, GENES), "w") as fh:
        fh.write("\n".join(bundle.genes) + "\n")
    write_table(
        os.path.join(root, EXPRESSION),
        ["cell_line_id", *bundle.genes],
        [[c, *map(_fmt, v)] for c, v in sorted(bundle.expression.items())],
    )
    if bundle.ppi is not None:
        write_table(
            os.path.join(root, PPI_EDGES),
            ["gene_a", "gene_b"],
            [[bundle.genes[i], bundle.genes[j]] for i, j in bundle.ppi.edges],
        )
    if bundle.ppi_embedding is not None:
        save_ppi_embedding(os.path.join(root, PPI_EMBEDDING), bundle.genes, bundle.ppi_embedding)
    if bundle.drug_embeddings is not None:
        ids = sorted(bundle.drug_embeddings)
        write_matrix(os.path.join(root, DRUG_EMBEDDINGS), "drug_id", ids, [bundle.drug_embeddings[i] for i in ids])
    if bundle.tissues is not None:
        write_table(os.path.join(root, TISSUES), ["cell_line", "tissue"], sorted(bundle.tissues.items()))
