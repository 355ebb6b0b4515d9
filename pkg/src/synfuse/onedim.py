"""1D features: drug vectors (precomputed table or trainable token fallback) and cell-line compression."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

DRUG_DIM = 768
# printable ASCII; anything else maps to the last slot
TOKEN_VOCAB = "".join(chr(c) for c in range(32, 127))
_TOKEN_INDEX = {ch: i for i, ch in enumerate(TOKEN_VOCAB)}
UNKNOWN_TOKEN = len(TOKEN_VOCAB)


class MissingEmbedding(KeyError):
    pass


def glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


@dataclass
class Linear:
    weight: ad.Parameter
    bias: ad.Parameter

    @classmethod
    def init(cls, name, fan_in, fan_out, rng):
        return cls(
            ad.Parameter(glorot(rng, fan_in, fan_out), f"{name}.weight"),
            ad.Parameter(np.zeros((1, fan_out)), f"{name}.bias"),
        )

    def __call__(self, x):
        return ad.add_bias(ad.matmul(x, self.weight), self.bias)

    def parameters(self):
        return [self.weight, self.bias]


def tokenize(smiles):
    return np.array([_TOKEN_INDEX.get(ch, UNKNOWN_TOKEN) for ch in smiles], dtype=np.intp)


class PrecomputedLookup:
    """drug_id → fixed 768-d vector, read from a TSV with a header row."""

    source = "precomputed"

    def __init__(self, table):
        self.table = {k: np.asarray(v, dtype=np.float64).reshape(1, -1) for k, v in table.items()}
        for k, v in self.table.items():
            if v.shape != (1, DRUG_DIM):
                raise ValueError(f"embedding for {k!r} has {v.shape[1]} values, expected {DRUG_DIM}")
            if not np.all(np.isfinite(v)):
                raise ValueError(f"embedding for {k!r} is not finite")

    def __contains__(self, drug_id):
        return drug_id in self.table

    def encode(self, drug_id, smiles=None):
        try:
            return ad.Tensor(self.table[drug_id])
        except KeyError:
            raise MissingEmbedding(drug_id) from None

    def encode_many(self, drug_ids, smiles=None):
        """Stacked rows, one per drug id."""
        missing = [d for d in drug_ids if d not in self.table]
        if missing:
            raise MissingEmbedding(missing[0])
        return ad.Tensor(np.concatenate([self.table[d] for d in drug_ids], axis=0))

    def parameters(self):
        return []


class TokenFallback:
    """Trainable character embeddings, mean-pooled and mapped linearly to 768 dims."""

    source = "token-fallback"

    def __init__(self, embedding, proj):
        self.embedding = embedding
        self.proj = proj

    @classmethod
    def init(cls, rng, token_dim=128, out_dim=DRUG_DIM, name="drug1d"):
        emb = ad.Parameter(rng.normal(0.0, 0.1, size=(len(TOKEN_VOCAB) + 1, token_dim)), f"{name}.tokens")
        return cls(emb, Linear.init(f"{name}.proj", token_dim, out_dim, rng))

    def pooled(self, smiles):
        ids = tokenize(smiles)
        if ids.size == 0:
            raise ValueError("cannot encode an empty SMILES")
        return ad.mean_rows(ad.gather_rows(self.embedding, ids))

    def encode(self, drug_id, smiles):
        return self.proj(self.pooled(smiles))

    def encode_many(self, drug_ids, smiles):
        """Row i encodes ``smiles[i]``; the projection runs once over the stacked pooled rows."""
        pooled = [self.pooled(s) for s in smiles]
        return self.proj(pooled[0] if len(pooled) == 1 else ad.concat_rows(*pooled))

    def parameters(self):
        return [self.embedding, *self.proj.parameters()]


def encode_drug_1d(encoder, drug_id, smiles=None):
    return encoder.encode(drug_id, smiles)


@dataclass
class CellLineMLP:
    layers: list

    @classmethod
    def init(cls, rng, sizes=(978, 512, 384, 256), name="cell"):
        return cls([Linear.init(f"{name}.{i}", a, b, rng) for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]))])

    def __call__(self, x, dropout=0.0, training=False, rng=None):
        h = x
        for layer in self.layers[:-1]:
            h = ad.dropout(ad.relu(layer(h)), dropout, training, rng)
        return self.layers[-1](h)

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]


def compress_cell_line(mlp, expression, dropout=0.0, training=False, rng=None):
    """Standardized 1×G expression row → 1×256 embedding."""
    return mlp(ad.as_tensor(expression), dropout, training, rng)


def assemble_1d(drug_a, drug_b, cell):
    return ad.concat_cols(drug_a, drug_b, cell)


@dataclass
class ExpressionScaler:
    """Per-gene z-score with statistics frozen from the training cell lines."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, rows):
        rows = np.asarray(rows, dtype=np.float64)
        mean = rows.mean(axis=0)
        std = rows.std(axis=0)
        std[std == 0] = 1.0
        return cls(mean, std)

    def transform(self, row):
        return (np.asarray(row, dtype=np.float64) - self.mean) / self.std
