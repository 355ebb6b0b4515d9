import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from synfuse import autodiff as ad
from synfuse.gradcheck import check_gradients
from synfuse.smiles import MolecularGraph, parse_smiles
from synfuse.twodim import (
    AttentionParams,
    EncoderParams,
    GcnParams,
    TransPoolParams,
    gcn_forward,
    graph_trans_pool,
    multi_head_attention,
    normalize_adjacency,
    transformer_encoder_layer,
)


# ---------------------------------------------------------------- straight-line numpy oracles

def np_gcn(features, adjacency, weights, self_loops=True):
    a = adjacency + np.eye(len(adjacency)) if self_loops else adjacency.copy()
    d = a.sum(axis=1)
    inv = np.array([1 / math.sqrt(x) if x > 0 else 0.0 for x in d])
    a_hat = np.diag(inv) @ a @ np.diag(inv)
    h = features
    for w in weights:
        h = np.maximum(a_hat @ h @ w, 0.0)
    return h


def np_attention_head(x, wq, wk, wv):
    q, k, v = x @ wq, x @ wk, x @ wv
    logits = q @ k.T / math.sqrt(wq.shape[1])
    out = np.empty((x.shape[0], v.shape[1]))
    attn = np.empty((x.shape[0], x.shape[0]))
    for i in range(x.shape[0]):
        e = np.exp(logits[i] - logits[i].max())
        attn[i] = e / e.sum()
        out[i] = attn[i] @ v
    return out, attn


def np_layer_norm(x, eps=ad.LN_EPS):
    mu = x.mean(axis=1, keepdims=True)
    return (x - mu) / np.sqrt(((x - mu) ** 2).mean(axis=1, keepdims=True) + eps)


def random_graph(rng, n, p=0.4, n_features=78):
    a = np.triu((rng.random((n, n)) < p).astype(float), 1)
    a = a + a.T
    feats = rng.normal(size=(n, n_features))
    return MolecularGraph(feats, a, ["C"] * n)


# ---------------------------------------------------------------- adjacency normalization

def test_single_node_with_loops():
    np.testing.assert_array_equal(normalize_adjacency(np.zeros((1, 1))), [[1.0]])


def test_edge_without_loops():
    np.testing.assert_array_equal(normalize_adjacency(np.array([[0, 1], [1, 0]]), False), [[0, 1], [1, 0]])


def test_path_without_loops():
    a_hat = normalize_adjacency(np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]]), False)
    assert a_hat[0, 1] == pytest.approx(1 / math.sqrt(2), abs=1e-15)
    assert a_hat[1, 1] == 0.0


def test_isolated_node_row_zero_without_loops():
    a_hat = normalize_adjacency(np.array([[0, 1, 0], [1, 0, 0], [0, 0, 0]]), False)
    assert not a_hat[2].any()


# ---------------------------------------------------------------- GCN

def test_gcn_single_atom(rng):
    g = parse_smiles("C")
    params = GcnParams.init(rng)
    w1, w2 = (w.value for w in params.weights)
    expected = np.maximum(np.maximum(g.features @ w1, 0) @ w2, 0)
    np.testing.assert_allclose(gcn_forward(g, params).value, expected, rtol=0, atol=1e-12)


def test_gcn_shapes_and_nonnegative(rng):
    g = parse_smiles("CC(=O)OC1=CC=CC=C1C(=O)O")
    h = gcn_forward(g, GcnParams.init(rng)).value
    assert h.shape == (13, 128)
    assert (h >= 0).all()


@pytest.mark.parametrize("self_loops", [True, False])
def test_gcn_path_oracle(rng, self_loops):
    path = MolecularGraph(rng.normal(size=(3, 78)), np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], float), list("CCC"))
    params = GcnParams.init(rng)
    expected = np_gcn(path.features, path.adjacency, [w.value for w in params.weights], self_loops)
    assert np.abs(gcn_forward(path, params, self_loops).value - expected).max() <= 1e-10


@pytest.mark.parametrize("seed", range(10))
def test_gcn_random_graph_oracle(seed):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, int(rng.integers(1, 12)))
    params = GcnParams.init(rng)
    expected = np_gcn(g.features, g.adjacency, [w.value for w in params.weights])
    assert np.abs(gcn_forward(g, params).value - expected).max() <= 1e-10


@pytest.mark.parametrize("seed", range(20))
def test_gcn_gradient(seed):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, 5, n_features=5)
    params = GcnParams.init(rng, units=(5, 5, 4))
    target = rng.normal(size=(4, 1))
    report = check_gradients(lambda: ad.mean_rows(ad.matmul(gcn_forward(g, params), target)), params.parameters())
    assert report.max_rel_error < 1e-4, report


# ---------------------------------------------------------------- attention

def test_single_token_attention(rng):
    params = AttentionParams.init(rng, dim=8, heads=2)
    x = rng.normal(size=(1, 8))
    out, scores = multi_head_attention(x, params)
    np.testing.assert_array_equal(scores, np.ones((2, 1, 1)))
    v = np.concatenate([x @ w.value for w in params.w_v], axis=1)
    np.testing.assert_allclose(out.value, v @ params.w_o.value, atol=1e-14)


def test_zero_query_key_gives_uniform_attention(rng):
    params = AttentionParams.init(rng, dim=8, heads=4)
    for w in params.w_q + params.w_k:
        w.value[:] = 0.0
    _, scores = multi_head_attention(rng.normal(size=(5, 8)), params)
    np.testing.assert_array_equal(scores, np.full((4, 5, 5), 0.2))


@pytest.mark.parametrize("seed", range(10))
def test_single_head_oracle(seed):
    rng = np.random.default_rng(seed)
    params = AttentionParams.init(rng, dim=8, heads=1)
    x = rng.normal(size=(3, 8))
    head, attn = np_attention_head(x, params.w_q[0].value, params.w_k[0].value, params.w_v[0].value)
    out, scores = multi_head_attention(x, params)
    assert np.abs(scores[0] - attn).max() <= 1e-10
    assert np.abs(out.value - head @ params.w_o.value).max() <= 1e-10


def test_multi_head_oracle(rng):
    params = AttentionParams.init(rng, dim=8, heads=4)
    x = rng.normal(size=(6, 8))
    heads = [np_attention_head(x, q.value, k.value, v.value)[0] for q, k, v in zip(params.w_q, params.w_k, params.w_v)]
    out, _ = multi_head_attention(x, params)
    assert np.abs(out.value - np.concatenate(heads, axis=1) @ params.w_o.value).max() <= 1e-10


@given(st.integers(0, 2**32 - 1), st.integers(1, 12), st.sampled_from([1, 2, 4]))
def test_attention_rows_are_stochastic(seed, n, heads):
    rng = np.random.default_rng(seed)
    params = AttentionParams.init(rng, dim=8, heads=heads)
    _, scores = multi_head_attention(rng.normal(scale=5.0, size=(n, 8)), params)
    assert np.abs(scores.sum(axis=2) - 1.0).max() <= 1e-9
    assert (scores >= 0).all()


def test_heads_must_divide_dim(rng):
    with pytest.raises(ValueError):
        AttentionParams.init(rng, dim=10, heads=4)


# ---------------------------------------------------------------- encoder block

def zero_encoder(rng, dim=8, heads=2, hidden=4):
    params = EncoderParams.init(rng, dim, heads, hidden)
    for p in params.parameters():
        if not p.name.endswith("gain"):
            p.value[:] = 0.0
    return params


def test_zero_sublayers_reduce_to_double_layer_norm(rng):
    x = rng.normal(size=(5, 8))
    out, _ = transformer_encoder_layer(x, zero_encoder(rng))
    np.testing.assert_allclose(out.value, np_layer_norm(np_layer_norm(x)), atol=1e-12)


@given(st.integers(0, 2**32 - 1), st.integers(1, 9))
def test_encoder_shape_contract(seed, n):
    rng = np.random.default_rng(seed)
    out, scores = transformer_encoder_layer(rng.normal(size=(n, 8)), EncoderParams.init(rng, 8, 2, 4))
    assert out.shape == (n, 8) and scores.shape == (2, n, n)


def test_encoder_layers_have_independent_weights(rng):
    params = TransPoolParams.init(rng, dim=8, heads=2, hidden=4, layers=2, out_dim=6)
    a, b = (enc.parameters() for enc in params.encoders)
    assert all(p is not q for p, q in zip(a, b))
    assert len({p.name for p in params.parameters()}) == len(params.parameters())


@pytest.mark.parametrize("seed", range(20))
@pytest.mark.parametrize("activation", ["relu", "gelu"])
def test_encoder_gradient(seed, activation):
    rng = np.random.default_rng(seed)
    params = EncoderParams.init(rng, dim=4, heads=2, hidden=3)
    for p in params.parameters():
        p.value += rng.normal(scale=0.1, size=p.shape)
    x = ad.Tensor(rng.normal(size=(5, 4)), requires_grad=True)
    target = rng.normal(size=(4, 1))

    def loss():
        out, _ = transformer_encoder_layer(x, params, activation, 0.2, True, np.random.default_rng(seed))
        return ad.mean_rows(ad.matmul(out, target))

    report = check_gradients(loss, [x, *params.parameters()])
    assert report.max_rel_error < 1e-4, report


# ---------------------------------------------------------------- graph-trans pooling

def test_pooling_with_zero_sublayers(rng):
    params = TransPoolParams.init(rng, dim=8, heads=2, hidden=4, layers=2, out_dim=6)
    for enc in params.encoders:
        for p in enc.parameters():
            if not p.name.endswith("gain"):
                p.value[:] = 0.0
    a, b, ppi = rng.normal(size=(3, 8)), rng.normal(size=(2, 8)), rng.normal(size=(7, 8))
    out, record = graph_trans_pool(ad.Tensor(a), ad.Tensor(b), ppi, params)
    x = np.concatenate([a, b, ppi])
    pooled = np_layer_norm(np_layer_norm(np_layer_norm(np_layer_norm(x)))).mean(axis=0)
    expected = np.maximum(pooled @ params.pool.weight.value + params.pool.bias.value[0], 0)
    np.testing.assert_allclose(out.value[0], expected, atol=1e-12)
    assert out.shape == (1, 6)
    assert (record.n_atoms_a, record.n_atoms_b, record.n_genes) == (3, 2, 7)


def test_mean_pool_of_constant_rows_is_that_row(rng):
    params = TransPoolParams.init(rng, dim=8, heads=2, hidden=4, layers=0, out_dim=6)
    row = rng.normal(size=(1, 8))
    params.pool.weight.value[:] = np.eye(8, 6)
    params.pool.bias.value[:] = 10.0  # keeps every unit above the ReLU kink
    out, record = graph_trans_pool(ad.Tensor(np.repeat(row, 2, 0)), ad.Tensor(row), np.repeat(row, 4, 0), params)
    np.testing.assert_array_equal(out.value, row[:, :6] + 10.0)
    assert record.layers == []


def pool_setup(seed):
    rng = np.random.default_rng(seed)
    gcn = GcnParams.init(rng, units=(78, 8, 8))
    params = TransPoolParams.init(rng, dim=8, heads=2, hidden=4, layers=2, out_dim=6)
    ppi = rng.normal(size=(5, 8))
    return rng, gcn, params, ppi


def test_atom_permutation_equivariance():
    rng, gcn, params, ppi = pool_setup(0)
    g = parse_smiles("CC(=O)Nc1ccc(O)cc1")
    b = gcn_forward(parse_smiles("CCO"), gcn)
    perm = rng.permutation(g.n_atoms)
    g_perm = MolecularGraph(g.features[perm], g.adjacency[np.ix_(perm, perm)], [g.atom_symbols[i] for i in perm])
    out, rec = graph_trans_pool(gcn_forward(g, gcn), b, ppi, params)
    out_p, rec_p = graph_trans_pool(gcn_forward(g_perm, gcn), b, ppi, params)
    np.testing.assert_allclose(out_p.value, out.value, atol=1e-12)
    full = np.concatenate([perm, np.arange(g.n_atoms, rec.layers[0].shape[1])])
    for layer, layer_p in zip(rec.layers, rec_p.layers):
        np.testing.assert_allclose(layer_p, layer[:, full][:, :, full], atol=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_gene_permutation_invariance(seed):
    rng, gcn, params, ppi = pool_setup(seed % 1000)
    a = gcn_forward(parse_smiles("c1ccncc1"), gcn)
    b = gcn_forward(parse_smiles("CC(=O)O"), gcn)
    perm = np.random.default_rng(seed).permutation(len(ppi))
    out, _ = graph_trans_pool(a, b, ppi, params)
    out_p, _ = graph_trans_pool(a, b, ppi[perm], params)
    np.testing.assert_allclose(out_p.value, out.value, atol=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_full_2d_path_gradient(seed):
    rng = np.random.default_rng(seed)
    gcn = GcnParams.init(rng, units=(78, 4, 4))
    params = TransPoolParams.init(rng, dim=4, heads=2, hidden=3, layers=2, out_dim=3)
    for p in params.parameters():
        p.value += rng.normal(scale=0.1, size=p.shape)
    ga, gb = parse_smiles("CCO"), parse_smiles("c1ccoc1")
    ppi = rng.normal(size=(3, 4))
    target = rng.normal(size=(3, 1))

    def loss():
        out, _ = graph_trans_pool(gcn_forward(ga, gcn), gcn_forward(gb, gcn), ppi, params,
                                  dropout=0.1, training=True, rng=np.random.default_rng(seed))
        return ad.matmul(out, target)

    report = check_gradients(loss, [*gcn.parameters(), *params.parameters()], max_entries=12, rng=rng)
    assert report.max_rel_error < 1e-4, report
