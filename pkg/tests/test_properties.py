"""Randomized invariants over generated graphs, associations and trees."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from supergraph import cdgc as cd
from supergraph import fusion as fu
from supergraph import hierarchy as hi
from supergraph import superpixel as spx
from supergraph.imageio import PixelFeatureMap
from supergraph.numerics import SparseAdj, normalize_adjacency, rel_error, row_sums, spmm
from supergraph.verify import kruskal, random_connected_graph, tree_fixture

seeds = st.integers(0, 2**32 - 1)
SETTINGS = settings(max_examples=40, deadline=None)


def make_graph(seed, n, d):
    rng = np.random.default_rng(seed)
    e, _ = random_connected_graph(rng, n)
    adj = SparseAdj.from_edges(n, e) if n > 1 else SparseAdj(n, [], [], [])
    return hi.SpGraph(rng.normal(size=(n, d)), rng.normal(size=(n, 2)) * 3, adj, rng.integers(1, 9, n)), rng


@SETTINGS
@given(seeds, st.integers(1, 24))
def test_normalized_adjacency_symmetric_and_bounded(seed, n):
    g, _ = make_graph(seed, n, 1)
    m = normalize_adjacency(g.adj).to_dense()
    assert np.array_equal(m, m.T)
    # spectral radius of the normalized adjacency is 1
    assert np.max(np.abs(np.linalg.eigvalsh(m))) <= 1 + 1e-12


@SETTINGS
@given(seeds, st.integers(1, 24), st.integers(1, 5))
def test_spmm_constant_rows(seed, n, d):
    g, rng = make_graph(seed, n, d)
    a = normalize_adjacency(g.adj)
    h0 = rng.normal(size=d)
    assert np.max(np.abs(spmm(a, np.tile(h0, (n, 1))) - row_sums(a)[:, None] * h0)) <= 1e-12


@SETTINGS
@given(seeds, st.integers(2, 16), st.integers(2, 16), st.integers(1, 4), st.integers(1, 4), st.floats(0.05, 20))
def test_association_rows_are_distributions(seed, h, w, gw, gh, temperature):
    if gw > w or gh > h:
        return
    rng = np.random.default_rng(seed)
    fm = PixelFeatureMap.from_features(rng.normal(size=(h, w, 3)) * 5, 0.5)
    cfg = spx.ClusterConfig(gw, gh, 2, temperature=temperature)
    q, sp = spx.init_grid(fm, cfg)
    q = spx.update_association(fm, sp, q, temperature)
    assert np.max(np.abs(q.probs.sum(axis=2) - 1)) <= 1e-9
    assert np.all(q.probs[q.ids < 0] == 0)
    assert np.all(q.probs >= 0)


@SETTINGS
@given(seeds, st.integers(2, 40))
def test_boruvka_equals_kruskal(seed, n):
    rng = np.random.default_rng(seed)
    e, w = random_connected_graph(rng, n, extra=1.0, integer_weights=bool(seed % 2))
    g = hi.SpGraph(np.zeros((n, 1)), np.zeros((n, 2)), SparseAdj.from_edges(n, e), np.ones(n))
    h = hi.boruvka_merge(g, [1], SparseAdj.from_edges(n, e, w))
    assert sorted(s[:2] for s in h.record.steps) == sorted(kruskal(n, e.tolist(), w.tolist()))


@SETTINGS
@given(seeds, st.integers(3, 40), st.data())
def test_merge_accounting(seed, n, data):
    g, _ = make_graph(seed, n, 2)
    k = data.draw(st.integers(1, min(3, n - 1)))
    targets = sorted(data.draw(st.sets(st.integers(1, n - 1), min_size=k, max_size=k)), reverse=True)
    h = hi.boruvka_merge(g, targets)
    assert len(h.record.steps) == n - targets[-1]
    assert [s.n for s in h.scales] == [n] + targets
    for k in range(1, h.K):
        m = h.fine_to_scale(k)
        assert np.unique(m).size == targets[k - 1]
        assert h.scales[k].sizes.sum() == g.sizes.sum()
        # every coarse region's fine members form a connected subgraph
        for c in range(targets[k - 1]):
            members = set(np.flatnonzero(m == c).tolist())
            seen, stack = set(), [min(members)]
            while stack:
                x = stack.pop()
                if x in seen:
                    continue
                seen.add(x)
                stack.extend(int(y) for y in g.adj.neighbors(x) if int(y) in members)
            assert seen == members


@SETTINGS
@given(seeds, st.integers(1, 20), st.integers(1, 6), st.sampled_from([0.0, 0.3, 0.4, 1.0]), st.sampled_from(["none", "subset"]))
def test_cdgc_paths_agree(seed, n, d, alpha, z_mode):
    g, rng = make_graph(seed, n, d)
    layer = cd.CdgcLayer(rng.normal(size=(d, 3)), alpha)
    p = cd.partition(g, z_mode)
    assert rel_error(cd.cdgc_forward(g, layer, p), cd.cdgc_matrix_forward(g, layer, p)) <= 1e-12


@SETTINGS
@given(seeds, st.integers(1, 20), st.integers(1, 6))
def test_cdgc_permutation_equivariant(seed, n, d):
    g, rng = make_graph(seed, n, d)
    perm = rng.permutation(n)
    inv = np.argsort(perm)
    e = g.adj.edge_list()
    adj = SparseAdj.from_edges(n, np.sort(inv[e], axis=1)) if e.size else g.adj
    gp = hi.SpGraph(g.feats[perm], g.centroids[perm], adj, g.sizes[perm])
    layer = cd.CdgcLayer(rng.normal(size=(d, 2)), 0.4, "relu")
    a = cd.cdgc_forward(g, layer, cd.partition(g, "subset"))
    b = cd.cdgc_forward(gp, layer, cd.partition(gp, "subset"))
    assert rel_error(a[perm], b) <= 1e-12


@SETTINGS
@given(seeds, st.integers(1, 20), st.integers(1, 6))
def test_cdgc_affine_in_alpha(seed, n, d):
    g, rng = make_graph(seed, n, d)
    w = rng.normal(size=(3, d, 2))
    p = cd.partition(g)
    o0, o5, o1 = (cd.cdgc_forward(g, cd.CdgcLayer(w, a), p) for a in (0.0, 0.5, 1.0))
    assert rel_error(o5, 0.5 * o0 + 0.5 * o1) <= 1e-12


@settings(max_examples=15, deadline=None)
@given(seeds, st.integers(1, 6), st.integers(1, 3))
def test_tree_gates_in_range(seed, n_leaves, n_branches):
    n_branches = min(n_branches, n_leaves)
    t, cell, _ = tree_fixture(seed % 10_000, n_leaves=n_leaves, n_branches=n_branches)
    s = fu.tree_lstm_up(t, cell)
    for lv in s.levels:
        assert np.all((lv.i > 0) & (lv.i < 1)) and np.all((lv.o > 0) & (lv.o < 1))
        assert np.all(np.abs(lv.u) < 1)
    assert np.all(np.abs(s.root_h) < 1)


@settings(max_examples=15, deadline=None)
@given(seeds, st.floats(-3, 3))
def test_root_fusion_is_linear(seed, lam):
    t, _, _ = tree_fixture(seed % 10_000)
    rng = np.random.default_rng(seed)
    w = fu.FusionWeights(rng.normal(size=(3, 3)), rng.normal(size=(3, 3)))
    scaled = fu.LevelTree(t.root_feat, lam * t.branch_feats, lam * t.leaf_feats, t.leaf_parent)
    assert np.allclose(fu.root_fusion(scaled, w), lam * fu.root_fusion(t, w), rtol=1e-12, atol=1e-12)
