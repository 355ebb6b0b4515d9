"""2D features: molecular-graph GCN plus attention pooling over [atoms(A) | atoms(B) | genes]."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .onedim import Linear, glorot

ACTIVATIONS = {"relu": ad.relu, "gelu": ad.gelu}


def normalize_adjacency(adjacency, self_loops=True):
    """Symmetric degree normalization; rows of isolated nodes stay zero without self-loops."""
    a = np.asarray(adjacency, dtype=np.float64)
    if self_loops:
        a = a + np.eye(a.shape[0])
    deg = a.sum(axis=1)
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    return inv_sqrt[:, None] * a * inv_sqrt[None, :]


@dataclass
class GcnParams:
    weights: list

    @classmethod
    def init(cls, rng, units=(78, 256, 128), name="gcn"):
        return cls([
            ad.Parameter(glorot(rng, a, b), f"{name}.W{i + 1}")
            for i, (a, b) in enumerate(zip(units[:-1], units[1:]))
        ])

    def parameters(self):
        return list(self.weights)


def gcn_forward(graph, params, self_loops=True, a_hat=None):
    """h(l+1) = ReLU(Â h(l) W(l)), starting from the atom features."""
    if a_hat is None:
        a_hat = normalize_adjacency(graph.adjacency, self_loops)
    a_hat = ad.Tensor(a_hat)
    h = ad.Tensor(graph.features)
    for w in params.weights:
        h = ad.relu(ad.matmul(a_hat, ad.matmul(h, w)))
    return h


@dataclass
class AttentionParams:
    w_q: list
    w_k: list
    w_v: list
    w_o: ad.Parameter

    @classmethod
    def init(cls, rng, dim=128, heads=4, name="attn"):
        if dim % heads:
            raise ValueError(f"model dim {dim} is not divisible by {heads} heads")
        dk = dim // heads

        def proj(kind, i):
            return ad.Parameter(glorot(rng, dim, dk), f"{name}.{kind}{i}")

        return cls(
            [proj("Wq", i) for i in range(heads)],
            [proj("Wk", i) for i in range(heads)],
            [proj("Wv", i) for i in range(heads)],
            ad.Parameter(glorot(rng, dim, dim), f"{name}.Wo"),
        )

    @property
    def heads(self):
        return len(self.w_q)

    def parameters(self):
        return [*self.w_q, *self.w_k, *self.w_v, self.w_o]


def multi_head_attention(x, params):
    """Returns (output N×dim, attention array heads×N×N)."""
    x = ad.as_tensor(x)
    outputs = []
    scores = []
    for wq, wk, wv in zip(params.w_q, params.w_k, params.w_v):
        q = ad.matmul(x, wq)
        k = ad.matmul(x, wk)
        v = ad.matmul(x, wv)
        logits = ad.scale(ad.matmul(q, ad.transpose(k)), 1.0 / math.sqrt(wq.shape[1]))
        attn = ad.softmax_rows(logits)
        scores.append(attn.value)
        outputs.append(ad.matmul(attn, v))
    merged = outputs[0] if len(outputs) == 1 else ad.concat_cols(*outputs)
    return ad.matmul(merged, params.w_o), np.stack(scores)


@dataclass
class EncoderParams:
    attention: AttentionParams
    ffn_in: Linear
    ffn_out: Linear
    norm1_gain: ad.Parameter
    norm1_bias: ad.Parameter
    norm2_gain: ad.Parameter
    norm2_bias: ad.Parameter

    @classmethod
    def init(cls, rng, dim=128, heads=4, hidden=64, name="enc"):
        return cls(
            AttentionParams.init(rng, dim, heads, f"{name}.attn"),
            Linear.init(f"{name}.ffn1", dim, hidden, rng),
            Linear.init(f"{name}.ffn2", hidden, dim, rng),
            ad.Parameter(np.ones((1, dim)), f"{name}.ln1.gain"),
            ad.Parameter(np.zeros((1, dim)), f"{name}.ln1.bias"),
            ad.Parameter(np.ones((1, dim)), f"{name}.ln2.gain"),
            ad.Parameter(np.zeros((1, dim)), f"{name}.ln2.bias"),
        )

    def parameters(self):
        return [
            *self.attention.parameters(),
            *self.ffn_in.parameters(),
            *self.ffn_out.parameters(),
            self.norm1_gain, self.norm1_bias, self.norm2_gain, self.norm2_bias,
        ]


def transformer_encoder_layer(x, params, activation="relu", dropout=0.0, training=False, rng=None):
    """Post-norm block; returns (output, attention heads×N×N)."""
    x = ad.as_tensor(x)
    attended, scores = multi_head_attention(x, params.attention)
    attended = ad.dropout(attended, dropout, training, rng)
    y = ad.layer_norm(ad.add(x, attended), params.norm1_gain, params.norm1_bias)
    ff = params.ffn_out(ACTIVATIONS[activation](params.ffn_in(y)))
    ff = ad.dropout(ff, dropout, training, rng)
    z = ad.layer_norm(ad.add(y, ff), params.norm2_gain, params.norm2_bias)
    return z, scores


@dataclass
class AttentionRecord:
    layers: list  # one heads×N×N array per encoder layer
    labels: list
    n_atoms_a: int
    n_atoms_b: int

    @property
    def n_genes(self):
        return len(self.labels) - self.n_atoms_a - self.n_atoms_b

    def blocks(self):
        a, b = self.n_atoms_a, self.n_atoms_b
        return slice(0, a), slice(a, a + b), slice(a + b, len(self.labels))

    def matrix(self, layer=-1, head=None):
        """Attention of one head, or the head average when ``head`` is None."""
        scores = self.layers[layer]
        return scores.mean(axis=0) if head is None else scores[head]


@dataclass
class TransPoolParams:
    encoders: list
    pool: Linear

    @classmethod
    def init(cls, rng, dim=128, heads=4, hidden=64, layers=2, out_dim=256, name="pool"):
        return cls(
            [EncoderParams.init(rng, dim, heads, hidden, f"{name}.enc{i}") for i in range(layers)],
            Linear.init(f"{name}.fc", dim, out_dim, rng),
        )

    def parameters(self):
        return [p for enc in self.encoders for p in enc.parameters()] + self.pool.parameters()


_POOLING = {"mean": ad.mean_rows, "max": ad.max_rows}


def graph_trans_pool(nodes_a, nodes_b, ppi, params, activation="relu", pooling="mean",
                     dropout=0.0, training=False, rng=None, labels=None):
    """Encode the stacked token matrix, pool over tokens, then ReLU(FC).

    With no encoder layers this is plain pooling of the stacked tokens.
    """
    x = ad.concat_rows(nodes_a, nodes_b, ad.as_tensor(ppi))
    layers = []
    for enc in params.encoders:
        x, scores = transformer_encoder_layer(x, enc, activation, dropout, training, rng)
        layers.append(scores)
    pooled = _POOLING[pooling](x)
    out = ad.relu(params.pool(pooled))
    if labels is None:
        labels = [""] * x.shape[0]
    return out, AttentionRecord(layers, list(labels), nodes_a.shape[0], nodes_b.shape[0])
