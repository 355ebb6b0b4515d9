"""Feature fusion, the MLP classifier, end-to-end training and checkpoints.

A ``ModelState`` owns every trainable block plus the frozen buffers the
forward pass needs (expression scaler, PPI embedding, drug tables), so a
checkpoint alone is enough to score any triplet whose drugs and cell line it
has seen.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import zipfile
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .config import Config, ConfigError
from .data import DataError
from .metrics import SingleClassInput, auroc
from .onedim import (
    CellLineMLP,
    ExpressionScaler,
    Linear,
    PrecomputedLookup,
    TokenFallback,
    assemble_1d,
    compress_cell_line,
)
from .smiles import SmilesError, parse_smiles
from .splits import stratified_holdout
from .twodim import GcnParams, TransPoolParams, gcn_forward, graph_trans_pool, normalize_adjacency

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
SYNERGY = 1  # class index of the synergy label


class DataGap(DataError):
    """Features missing for one or more triplets; ``offenders`` names each gap."""

    def __init__(self, offenders):
        self.offenders = sorted(set(offenders))
        super().__init__("missing features: " + "; ".join(self.offenders))


class NonFiniteLoss(FloatingPointError):
    """Training diverged; ``state`` holds the last good parameters."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class CheckpointMismatch(ConfigError):
    pass


@dataclass
class SynergyPrediction:
    triplet_id: str
    prob_synergy: float
    prob_antagonism: float
    label: int
    hidden_512: np.ndarray
    hidden_32: np.ndarray


@dataclass
class Resources:
    """Lookup tables the forward pass reads; none of it is trained."""

    smiles: dict
    expression: dict  # cell line -> raw expression in ``genes`` order
    genes: list
    ppi_embedding: np.ndarray | None = None
    drug_embeddings: dict | None = None
    ppi_degree: np.ndarray | None = None  # per gene, for interpretation exports

    @classmethod
    def from_bundle(cls, bundle):
        degree = bundle.ppi.degree() if bundle.ppi is not None else None
        return cls(dict(bundle.smiles), dict(bundle.expression), list(bundle.genes),
                   bundle.ppi_embedding, bundle.drug_embeddings, degree)

    def overlay(self, other):
        """Entries of ``other`` take precedence; the PPI embedding and gene order stay ours."""
        if other is None:
            return self
        if list(other.genes) != list(self.genes):
            raise DataGap(["expression gene order differs from the model's gene manifest"])
        drugs = dict(self.drug_embeddings or {})
        drugs.update(other.drug_embeddings or {})
        return Resources({**self.smiles, **other.smiles}, {**self.expression, **other.expression},
                         self.genes, self.ppi_embedding, drugs or None, self.ppi_degree)


@dataclass
class Classifier:
    layers: list  # Linear blocks: a0 -> 512 -> 32 -> 2

    @classmethod
    def init(cls, rng, in_dim, hidden=(512, 32), n_classes=2, name="clf"):
        sizes = (in_dim, *hidden, n_classes)
        return cls([Linear.init(f"{name}.{i}", a, b, rng) for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]))])

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]


@dataclass
class ModelState:
    config: Config
    seed: int
    resources: Resources
    scaler: ExpressionScaler
    drug_source: str  # "precomputed" or "token-fallback"
    drug_encoder: object | None
    cell_mlp: CellLineMLP | None
    gcn: GcnParams | None
    pool: TransPoolParams | None
    classifier: Classifier
    history: list = field(default_factory=list)
    _graphs: dict = field(default_factory=dict, repr=False)

    @property
    def fingerprint(self):
        return self.config.fingerprint()

    def parameters(self):
        params = []
        if self.drug_encoder is not None:
            params += self.drug_encoder.parameters()
        for block in (self.cell_mlp, self.gcn, self.pool, self.classifier):
            if block is not None:
                params += block.parameters()
        return params

    def named_parameters(self):
        return {p.name: p for p in self.parameters()}

    def snapshot(self):
        return {p.name: p.value.copy() for p in self.parameters()}

    def restore(self, values):
        for p in self.parameters():
            p.value[...] = values[p.name]

    def graph(self, smiles):
        """Parsed molecule and its normalized adjacency, cached per SMILES string."""
        if smiles not in self._graphs:
            g = parse_smiles(smiles)
            self._graphs[smiles] = (g, normalize_adjacency(g.adjacency, self.config.self_loops))
        return self._graphs[smiles]


def resolve_drug_source(config, resources):
    if config.drug_1d_encoder == "precomputed":
        if not resources.drug_embeddings:
            raise ConfigError("drug_1d_encoder=precomputed but no drug embedding table was supplied")
        return "precomputed"
    if config.drug_1d_encoder == "fallback":
        return "token-fallback"
    return "precomputed" if resources.drug_embeddings else "token-fallback"


def build_state(config, resources, scaler, seed):
    """Fresh parameters, created in a fixed order from one seeded stream."""
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
    source = resolve_drug_source(config, resources)
    drug_encoder = cell_mlp = gcn = pool = None
    if config.uses_1d:
        if source == "precomputed":
            drug_encoder = PrecomputedLookup(resources.drug_embeddings)
        else:
            drug_encoder = TokenFallback.init(rng, config.token_dim, config.drug_dim)
        cell_mlp = CellLineMLP.init(rng, (len(resources.genes), *config.cell_hidden, config.cell_dim))
    if config.uses_2d:
        gcn = GcnParams.init(rng, config.gcn_hidden_units)
        pool = TransPoolParams.init(rng, config.model_dim, config.attention_heads, config.encoder_hidden,
                                    config.n_encoder_layers, config.pool_dim)
    classifier = Classifier.init(rng, config.classifier_input, config.classifier_hidden)
    state = ModelState(config, seed, resources, scaler, source, drug_encoder, cell_mlp, gcn, pool, classifier)
    names = [p.name for p in state.parameters()]
    if len(names) != len(set(names)):
        raise AssertionError("duplicate parameter names in model state")
    return state


# ---------------------------------------------------------------- forward


def find_gaps(state_or_config, resources, triplets):
    """Every missing input the forward pass would hit, as readable strings."""
    config = getattr(state_or_config, "config", state_or_config)
    source = getattr(state_or_config, "drug_source", None) or resolve_drug_source(config, resources)
    gaps = []
    drugs = sorted({d for t in triplets for d in (t.drug_a, t.drug_b)})
    for d in drugs:
        if d not in resources.smiles:
            gaps.append(f"drug {d}: no SMILES")
        elif config.uses_2d:
            try:
                parse_smiles(resources.smiles[d])
            except SmilesError as exc:
                gaps.append(f"drug {d}: unparseable SMILES ({exc})")
        if config.uses_1d and source == "precomputed" and d not in (resources.drug_embeddings or {}):
            gaps.append(f"drug {d}: no precomputed 1D vector")
    for c in sorted({t.cell_line for t in triplets}):
        if config.uses_1d and c not in resources.expression:
            gaps.append(f"cell line {c}: no expression row")
    if config.uses_2d:
        emb = resources.ppi_embedding
        if emb is None:
            gaps.append("PPI embedding: not available")
        elif emb.shape != (len(resources.genes), config.model_dim):
            gaps.append(f"PPI embedding: shape {emb.shape}, expected ({len(resources.genes)}, {config.model_dim})")
    return gaps


def _classify(a0, state, training=False, rng=None):
    """a0 → ReLU 512 (dropout) → ReLU 32 → logits → softmax; returns (probs, h512, h32)."""
    first, second, out = state.classifier.layers
    h1 = ad.relu(first(a0))
    h1 = ad.dropout(h1, state.config.dropout, training, rng)
    h2 = ad.relu(second(h1))
    probs = ad.softmax_rows(out(h2))
    return probs, h1, h2


def _prediction(triplet_id, probs, h1, h2, row=0):
    p = probs[row]
    return SynergyPrediction(
        triplet_id, float(p[SYNERGY]), float(p[1 - SYNERGY]), int(p[SYNERGY] >= 0.5),
        h1[row].copy(), h2[row].copy(),
    )


def _join(parts):
    parts = [p for p in parts if p is not None]
    return parts[0] if len(parts) == 1 else ad.concat_cols(*parts)


def forward_classify(f1d, f2d, state, triplet_id=""):
    """Inference on already-computed feature vectors; either may be None for an ablation variant."""
    a0 = _join([None if x is None else ad.as_tensor(x) for x in (f1d, f2d)])
    if a0.shape[1] != state.config.classifier_input:
        raise ad.ShapeMismatch(f"classifier expects {state.config.classifier_input} inputs, got {a0.shape[1]}")
    with ad.no_tape():
        probs, h1, h2 = _classify(a0, state)
    return _prediction(triplet_id, probs.value, h1.value, h2.value)


def one_d_features(state, triplets, res, training=False, rng=None):
    """Stacked [drugA | drugB | cell] rows, B×1792."""
    cfg = state.config
    ids_a = [t.drug_a for t in triplets]
    ids_b = [t.drug_b for t in triplets]
    da = state.drug_encoder.encode_many(ids_a, [res.smiles.get(d) for d in ids_a])
    db = state.drug_encoder.encode_many(ids_b, [res.smiles.get(d) for d in ids_b])
    expr = np.stack([state.scaler.transform(res.expression[t.cell_line]) for t in triplets])
    cell = compress_cell_line(state.cell_mlp, expr, cfg.dropout, training, rng)
    return assemble_1d(da, db, cell)


def two_d_features(state, triplet, res, training=False, rng=None):
    """Pooled 1×256 graph/PPI vector and the attention record of one triplet."""
    cfg = state.config
    ga, a_hat_a = state.graph(res.smiles[triplet.drug_a])
    gb, a_hat_b = state.graph(res.smiles[triplet.drug_b])
    na = gcn_forward(ga, state.gcn, a_hat=a_hat_a)
    nb = gcn_forward(gb, state.gcn, a_hat=a_hat_b)
    labels = ([f"A:{i}:{s}" for i, s in enumerate(ga.atom_symbols)]
              + [f"B:{i}:{s}" for i, s in enumerate(gb.atom_symbols)]
              + list(res.genes))
    return graph_trans_pool(na, nb, res.ppi_embedding, state.pool, cfg.activation, cfg.pooling,
                            cfg.dropout, training, rng, labels)


def forward_rows(state, triplets, training=False, rng=None, resources=None):
    """Everything on the active tape: returns (probs B×2, h512, h32, attention records)."""
    res = resources or state.resources
    f1d = f2d = None
    records = []
    if state.config.uses_2d:
        rows = []
        for t in triplets:
            f, rec = two_d_features(state, t, res, training, rng)
            rows.append(f)
            records.append(rec)
        f2d = rows[0] if len(rows) == 1 else ad.concat_rows(*rows)
    if state.config.uses_1d:
        f1d = one_d_features(state, triplets, res, training, rng)
    probs, h1, h2 = _classify(_join([f1d, f2d]), state, training, rng)
    return probs, h1, h2, records


def forward(state, triplet, training=False, rng=None, resources=None):
    """Single triplet: (probs 1×2, h512, h32, attention record or None)."""
    probs, h1, h2, records = forward_rows(state, [triplet], training, rng, resources)
    return probs, h1, h2, (records[0] if records else None)


INFER_CHUNK = 256


def infer(state, triplets, resources=None):
    """Dropout-free (probs, h512, h32) arrays for triplets whose inputs all resolve."""
    probs, h1, h2 = [], [], []
    with ad.no_tape():
        for lo in range(0, len(triplets), INFER_CHUNK):
            p, a, b, _ = forward_rows(state, triplets[lo:lo + INFER_CHUNK], resources=resources)
            probs.append(p.value)
            h1.append(a.value)
            h2.append(b.value)
    if not probs:
        hidden = state.config.classifier_hidden
        return np.zeros((0, 2)), np.zeros((0, hidden[0])), np.zeros((0, hidden[1]))
    return np.concatenate(probs), np.concatenate(h1), np.concatenate(h2)


def predict_batch(state, triplets, resources=None):
    """Order-preserving inference; a row whose inputs are missing yields a ``DataGap`` in its slot."""
    res = state.resources.overlay(resources)
    out = [None] * len(triplets)
    good = []
    for i, t in enumerate(triplets):
        gaps = find_gaps(state, res, [t])
        if gaps:
            out[i] = DataGap([f"{t.id}: {g}" for g in gaps])
        else:
            good.append(i)
    probs, h1, h2 = infer(state, [triplets[i] for i in good], res)
    for row, i in enumerate(good):
        out[i] = _prediction(triplets[i].id, probs, h1, h2, row)
    return out


def synergy_scores(state, triplets, resources=None):
    res = state.resources.overlay(resources)
    gaps = find_gaps(state, res, triplets)
    if gaps:
        raise DataGap(gaps)
    return infer(state, list(triplets), res)[0][:, SYNERGY]


# ---------------------------------------------------------------- training

# live attention entries allowed per training chunk; bounds memory at full gene panels
PAIR_BUDGET = 2_000_000


def chunk_size(config, batch_size, n_genes, atoms_per_drug=40):
    if not config.uses_2d:
        return batch_size
    tokens = n_genes + 2 * atoms_per_drug
    return int(max(1, min(batch_size, PAIR_BUDGET // (tokens * tokens))))


def _train_chunk(state, chunk, weight, rng):
    """Accumulate ``weight`` × mean-loss gradients of one chunk; returns (summed loss, correct count).

    Each triplet's graph path keeps its own tape. The 1D path and classifier run
    batched on a second tape whose input rows are detached copies of the pooled
    graph vectors; their gradients then seed the per-triplet tapes.
    """
    res = state.resources
    graph_tapes = []
    leaf = None
    if state.config.uses_2d:
        rows = []
        for t in chunk:
            tape = ad.Tape()
            with tape:
                f, _ = two_d_features(state, t, res, True, rng)
            graph_tapes.append((tape, f))
            rows.append(f.value)
        leaf = ad.Tensor(np.concatenate(rows), requires_grad=True)
    labels = [t.label for t in chunk]
    with ad.Tape() as tape:
        f1d = one_d_features(state, chunk, res, True, rng) if state.config.uses_1d else None
        probs, _, _ = _classify(_join([f1d, leaf]), state, True, rng)
        loss = ad.cross_entropy(probs, labels)
        value = loss.item()
        if not np.isfinite(value):
            raise FloatingPointError("non-finite loss")
        tape.backward(loss, seed=weight)
    for i, (graph_tape, f) in enumerate(graph_tapes):
        graph_tape.backward(f, seed=leaf.grad[i:i + 1])
    hits = int(np.sum((probs.value[:, SYNERGY] >= 0.5) == np.array(labels, dtype=bool)))
    return value * len(chunk), hits


def _selection_score(state, triplets):
    """Validation AUROC, or None when the validation set cannot rank."""
    if not triplets:
        return None
    scores = synergy_scores(state, triplets)
    try:
        return auroc(scores, [t.label for t in triplets])
    except SingleClassInput:
        return None


def train(bundle, config=None, seed=None, log_path=None, resources=None):
    """End-to-end Adam on mean cross-entropy; returns the best-validation checkpoint.

    The scaler is fitted on the cell lines of ``bundle.triplets`` (the training
    fold). When the validation split cannot rank (empty or single-class), the
    lowest training loss selects the checkpoint instead.
    """
    config = config or Config()
    seed = config.seed if seed is None else seed
    resources = resources or Resources.from_bundle(bundle)
    triplets = list(bundle.triplets)
    if not triplets:
        raise DataGap(["no training triplets"])
    gaps = find_gaps(config, resources, triplets)
    if gaps:
        raise DataGap(gaps)

    split_ss, init_ss, shuffle_ss, drop_ss = np.random.SeedSequence(seed).spawn(4)
    labels = np.array([t.label for t in triplets])
    train_idx, val_idx = stratified_holdout(labels, config.val_fraction, np.random.default_rng(split_ss))
    train_set = [triplets[i] for i in train_idx]
    val_set = [triplets[i] for i in val_idx]
    if config.augment_swapped:
        train_set = train_set + [t.swapped() for t in train_set]

    n_genes = len(resources.genes)
    if config.uses_1d:
        cells = sorted({t.cell_line for t in triplets})
        scaler = ExpressionScaler.fit([resources.expression[c] for c in cells])
    else:
        scaler = ExpressionScaler(np.zeros(n_genes), np.ones(n_genes))
    state = build_state(config, resources, scaler, int(init_ss.generate_state(1)[0]))
    state.seed = seed
    opt = ad.Adam(state.parameters(), lr=config.learning_rate)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    drop_rng = np.random.default_rng(drop_ss)
    step = chunk_size(config, config.batch_size, n_genes)

    best = state.snapshot()
    best_key = None
    since_best = 0
    history = []
    for epoch in range(1, config.max_epochs + 1):
        order = shuffle_rng.permutation(len(train_set))
        total = 0.0
        hits = 0
        for lo in range(0, len(order), config.batch_size):
            batch = [train_set[i] for i in order[lo:lo + config.batch_size]]
            opt.zero_grad()
            for clo in range(0, len(batch), step):
                chunk = batch[clo:clo + step]
                try:
                    loss, ok = _train_chunk(state, chunk, len(chunk) / len(batch), drop_rng)
                except FloatingPointError:
                    state.restore(best)
                    raise NonFiniteLoss(f"epoch {epoch}: non-finite loss", state) from None
                total += loss
                hits += ok
            try:
                opt.step()
            except ad.NonFiniteGradient as exc:
                state.restore(best)
                raise NonFiniteLoss(f"epoch {epoch}: non-finite gradient in {exc.name}", state) from exc

        row = {"epoch": epoch, "train_loss": total / len(train_set), "train_acc_running": hits / len(train_set)}
        if config.stop_at_train_accuracy is not None:
            scores = synergy_scores(state, train_set)
            row["train_acc"] = float(np.mean((scores >= 0.5) == np.array([t.label for t in train_set], dtype=bool)))
        val = _selection_score(state, val_set)
        row["val_auroc"] = val
        history.append(row)
        log.info("epoch %d loss %.5f val_auroc %s", epoch, row["train_loss"], val)

        key = (1, val) if val is not None else (0, -row["train_loss"])
        if best_key is None or key > best_key:
            best_key, best, since_best = key, state.snapshot(), 0
        else:
            since_best += 1
        if config.stop_at_train_accuracy is not None and row["train_acc"] >= config.stop_at_train_accuracy:
            best = state.snapshot()  # the overfit target concerns the current weights
            break
        if since_best >= config.patience:
            break

    state.restore(best)
    state.history = history
    if log_path:
        write_history(log_path, history)
    return state


def write_history(path, history):
    cols = ["epoch", "train_loss", "train_acc_running", "train_acc", "val_auroc"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in history:
            w.writerow(["" if row.get(c) is None else repr(row[c]) if isinstance(row[c], float) else row[c]
                        for c in cols])


# ---------------------------------------------------------------- checkpoints

_EPOCH = (1980, 1, 1, 0, 0, 0)


def _npy(array):
    buf = io.BytesIO()
    np.save(buf, np.ascontiguousarray(array), allow_pickle=False)
    return buf.getvalue()


def _write(zf, name, payload):
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, payload)


def save_checkpoint(state, path):
    """Zip of a JSON manifest plus one .npy per array; byte-identical for identical states."""
    res = state.resources
    cells = sorted(res.expression)
    drug_ids = sorted(res.drug_embeddings) if res.drug_embeddings else []
    params = state.parameters()
    manifest = {
        "format_version": FORMAT_VERSION,
        "fingerprint": state.fingerprint,
        "seed": state.seed,
        "config": state.config.to_dict(),
        "drug_source": state.drug_source,
        "parameters": [{"name": p.name, "shape": list(p.shape)} for p in params],
        "genes": list(res.genes),
        "smiles": dict(sorted(res.smiles.items())),
        "cell_lines": cells,
        "drug_embedding_ids": drug_ids,
        "has_ppi_embedding": res.ppi_embedding is not None,
        "has_ppi_degree": res.ppi_degree is not None,
        "history": state.history,
    }
    with zipfile.ZipFile(path, "w") as zf:
        _write(zf, "manifest.json", json.dumps(manifest, indent=1, sort_keys=True))
        for p in params:
            _write(zf, f"params/{p.name}.npy", _npy(p.value))
        _write(zf, "buffers/expr_mean.npy", _npy(state.scaler.mean))
        _write(zf, "buffers/expr_std.npy", _npy(state.scaler.std))
        _write(zf, "buffers/expression.npy", _npy(np.stack([res.expression[c] for c in cells])
                                                   if cells else np.zeros((0, len(res.genes)))))
        if res.ppi_embedding is not None:
            _write(zf, "buffers/ppi_embedding.npy", _npy(res.ppi_embedding))
        if res.ppi_degree is not None:
            _write(zf, "buffers/ppi_degree.npy", _npy(np.asarray(res.ppi_degree, dtype=np.int64)))
        if drug_ids:
            _write(zf, "buffers/drug_embeddings.npy", _npy(np.stack([res.drug_embeddings[d] for d in drug_ids])))


def load_checkpoint(path, expected_config=None):
    """Rebuild a ModelState; a config whose fingerprint differs from the stored one is rejected."""
    try:
        zf = zipfile.ZipFile(path)
    except (OSError, zipfile.BadZipFile) as exc:
        raise DataError(f"cannot open checkpoint {path}: {exc}") from exc
    with zf:
        manifest = json.loads(zf.read("manifest.json"))
        if manifest.get("format_version") != FORMAT_VERSION:
            raise CheckpointMismatch(f"unsupported checkpoint format {manifest.get('format_version')}")
        config = Config.from_dict(manifest["config"])
        if config.fingerprint() != manifest["fingerprint"]:
            raise CheckpointMismatch("stored config does not match the stored fingerprint")
        if expected_config is not None and expected_config.fingerprint() != manifest["fingerprint"]:
            raise CheckpointMismatch(
                f"checkpoint fingerprint {manifest['fingerprint']} != config fingerprint {expected_config.fingerprint()}"
            )
        arr = lambda name: np.load(io.BytesIO(zf.read(name)), allow_pickle=False)  # noqa: E731
        cells = manifest["cell_lines"]
        expression = dict(zip(cells, arr("buffers/expression.npy")))
        ppi = arr("buffers/ppi_embedding.npy") if manifest["has_ppi_embedding"] else None
        drug_ids = manifest["drug_embedding_ids"]
        drugs = dict(zip(drug_ids, arr("buffers/drug_embeddings.npy"))) if drug_ids else None
        degree = arr("buffers/ppi_degree.npy") if manifest.get("has_ppi_degree") else None
        resources = Resources(manifest["smiles"], expression, manifest["genes"], ppi, drugs, degree)
        scaler = ExpressionScaler(arr("buffers/expr_mean.npy"), arr("buffers/expr_std.npy"))
        state = build_state(config, resources, scaler, 0)
        if state.drug_source != manifest["drug_source"]:
            raise CheckpointMismatch("drug encoder source differs from the stored one")
        expected = {(p["name"], tuple(p["shape"])) for p in manifest["parameters"]}
        actual = {(p.name, p.shape) for p in state.parameters()}
        if expected != actual:
            raise CheckpointMismatch("parameter set in checkpoint does not match its config")
        for p in state.parameters():
            p.value[...] = arr(f"params/{p.name}.npy")
        state.seed = manifest["seed"]
        state.history = manifest["history"]
    return state
