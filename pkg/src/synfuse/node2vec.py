"""Biased second-order random walks and skip-gram with negative sampling."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


@dataclass
class PpiNetwork:
    nodes: list
    edges: list  # (i, j) index pairs, i != j, undirected, deduplicated

    def __post_init__(self):
        n = len(self.nodes)
        seen = set()
        clean = []
        for i, j in self.edges:
            if i == j:
                raise ValueError(f"self-edge on node {self.nodes[i]!r}")
            if not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"edge ({i}, {j}) outside {n} nodes")
            key = (min(i, j), max(i, j))
            if key not in seen:
                seen.add(key)
                clean.append(key)
        self.edges = clean
        nbrs = [[] for _ in range(n)]
        for i, j in clean:
            nbrs[i].append(j)
            nbrs[j].append(i)
        self.neighbors = [np.array(sorted(x), dtype=np.intp) for x in nbrs]
        self._neighbor_sets = [set(x) for x in nbrs]

    @classmethod
    def from_symbol_pairs(cls, genes, pairs):
        """Build from gene-symbol pairs; pairs touching genes outside ``genes`` are dropped."""
        index = {g: i for i, g in enumerate(genes)}
        edges = []
        dropped = 0
        for a, b in pairs:
            if a not in index or b not in index:
                dropped += 1
                continue
            if a != b:
                edges.append((index[a], index[b]))
        if dropped:
            log.warning("dropped %d PPI edges with genes outside the %d-gene panel", dropped, len(genes))
        net = cls(list(genes), edges)
        net.dropped_edges = dropped
        return net

    def __len__(self):
        return len(self.nodes)

    def degree(self):
        return np.array([len(x) for x in self.neighbors])

    def has_edge(self, i, j):
        return j in self._neighbor_sets[i]


def _transition_table(net, p, q):
    """Cumulative next-hop probabilities for every directed edge (prev, cur)."""
    table = {}
    for prev in range(len(net)):
        for cur in net.neighbors[prev]:
            cand = net.neighbors[cur]
            w = np.empty(len(cand))
            for k, nxt in enumerate(cand):
                if nxt == prev:
                    w[k] = 1.0 / p
                elif net.has_edge(nxt, prev):
                    w[k] = 1.0
                else:
                    w[k] = 1.0 / q
            table[(prev, int(cur))] = np.cumsum(w / w.sum())
    return table


def _pick(cum, rng):
    k = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
    return min(k, len(cum) - 1)


def node2vec_walks(net, p=1.0, q=1.0, walk_len=80, walks_per_node=10, rng=None, seed=0):
    """``walks_per_node`` walks from every node; node ``v`` draws from its own RNG stream.

    Passing ``rng`` derives the per-node streams from it; otherwise ``seed`` does.
    """
    root = np.random.SeedSequence(int(rng.integers(2**63)) if rng is not None else seed)
    streams = [np.random.default_rng(s) for s in root.spawn(len(net))]
    table = _transition_table(net, p, q)
    walks = []
    for rep in range(walks_per_node):
        for start in range(len(net)):
            g = streams[start]
            walk = [start]
            nbrs = net.neighbors[start]
            if len(nbrs):
                walk.append(int(nbrs[g.integers(len(nbrs))]))
                while len(walk) < walk_len:
                    cum = table[(walk[-2], walk[-1])]
                    walk.append(int(net.neighbors[walk[-1]][_pick(cum, g)]))
            walks.append(walk[:walk_len])
    return walks


def _pairs(walks, window, rng):
    centers, contexts = [], []
    for walk in walks:
        w = np.asarray(walk, dtype=np.intp)
        n = len(w)
        if n < 2:
            continue
        reach = rng.integers(1, window + 1, size=n)  # word2vec-style shrunk window
        for d in range(1, min(window, n - 1) + 1):
            fwd = reach[: n - d] >= d
            centers.append(w[: n - d][fwd])
            contexts.append(w[d:][fwd])
            bwd = reach[d:] >= d
            centers.append(w[d:][bwd])
            contexts.append(w[: n - d][bwd])
    if not centers:
        return np.empty(0, np.intp), np.empty(0, np.intp)
    return np.concatenate(centers), np.concatenate(contexts)


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


@dataclass
class SkipGramResult:
    embedding: np.ndarray
    losses: list


def train_skipgram(walks, n_nodes, dim=128, window=10, negatives=5, epochs=5, rng=None,
                   lr=0.025, batch_size=None):
    """Returns the input-embedding matrix and the mean loss of each epoch.

    Pairs are processed in small simultaneous batches; the default size keeps
    repeated hits on one row per batch rare (about a quarter of the node count,
    capped at 512), which is what keeps summed updates stable on tiny graphs.
    """
    if not walks:
        raise ValueError("no walks to train on")
    rng = rng if rng is not None else np.random.default_rng(0)
    if batch_size is None:
        batch_size = int(np.clip(n_nodes // 4, 1, 512))
    w_in = (rng.random((n_nodes, dim)) - 0.5) / dim
    w_out = np.zeros((n_nodes, dim))

    counts = np.bincount(np.concatenate([np.asarray(w, dtype=np.intp) for w in walks]), minlength=n_nodes)
    noise = counts.astype(np.float64) ** 0.75
    noise /= noise.sum()
    noise_cum = np.cumsum(noise)

    losses = []
    pair_sets = [_pairs(walks, window, rng) for _ in range(epochs)]
    total = sum(len(c) for c, _ in pair_sets)
    seen = 0
    for centers, contexts in pair_sets:
        order = rng.permutation(len(centers))
        centers, contexts = centers[order], contexts[order]
        epoch_loss = 0.0
        for lo in range(0, len(centers), batch_size):
            c = centers[lo:lo + batch_size]
            o = contexts[lo:lo + batch_size]
            alpha = max(lr * (1.0 - seen / max(total, 1)), lr * 1e-4)
            seen += len(c)
            neg = np.minimum(np.searchsorted(noise_cum, rng.random((len(c), negatives))), n_nodes - 1)
            targets = np.concatenate([o[:, None], neg], axis=1)
            sign = np.ones(targets.shape)
            sign[:, 1:] = -1.0
            vc = w_in[c]
            u = w_out[targets]
            s = np.einsum("bd,bkd->bk", vc, u) * sign
            epoch_loss -= _log_sigmoid(s).sum()
            coeff = -np.exp(_log_sigmoid(-s)) * sign  # d(-log σ(s))/d(raw score)
            grad_vc = np.einsum("bk,bkd->bd", coeff, u)
            grad_u = coeff[:, :, None] * vc[:, None, :]
            np.add.at(w_in, c, -alpha * grad_vc)
            np.add.at(w_out, targets.reshape(-1), -alpha * grad_u.reshape(-1, dim))
        losses.append(epoch_loss / max(len(centers), 1))
    return SkipGramResult(w_in, losses)


@dataclass
class Node2VecConfig:
    dim: int = 128
    p: float = 1.0
    q: float = 1.0
    walk_len: int = 80
    walks_per_node: int = 10
    window: int = 10
    negatives: int = 5
    epochs: int = 5
    lr: float = 0.025


def embed_network(net, config=None, seed=0):
    """Walks + skip-gram; returns the node×dim embedding (rows follow ``net.nodes``)."""
    config = config or Node2VecConfig()
    rng = np.random.default_rng(seed)
    walks = node2vec_walks(net, config.p, config.q, config.walk_len, config.walks_per_node, rng=rng)
    result = train_skipgram(walks, len(net), config.dim, config.window, config.negatives,
                            config.epochs, rng, config.lr)
    log.info("skip-gram epoch losses: %s", ", ".join(f"{x:.4f}" for x in result.losses))
    return result.embedding
