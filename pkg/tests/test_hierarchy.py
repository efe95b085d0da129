import numpy as np
import pytest

from supergraph import hierarchy as hi
from supergraph import superpixel as spx
from supergraph.imageio import PixelFeatureMap
from supergraph.numerics import SparseAdj
from supergraph.verify import kruskal, random_connected_graph


def graph(n, edges, feats=None, sizes=None, centroids=None):
    feats = np.zeros((n, 1)) if feats is None else np.asarray(feats, float)
    centroids = np.zeros((n, 2)) if centroids is None else centroids
    sizes = np.ones(n, int) if sizes is None else sizes
    return hi.SpGraph(feats, centroids, SparseAdj.from_edges(n, edges), sizes)


def label_map(labels, feats=None):
    labels = np.asarray(labels)
    f = np.zeros(labels.shape + (1,)) if feats is None else feats
    fm = PixelFeatureMap.from_features(f, 1.0)
    return spx.compact_labels(fm, labels)


def brute_force_adjacent_pairs(labels):
    h, w = labels.shape
    pairs = set()
    for i in range(h):
        for j in range(w):
            for di, dj in ((0, 1), (1, 0)):
                a, b = i + di, j + dj
                if a < h and b < w and labels[i, j] != labels[a, b]:
                    pairs.add(tuple(sorted((int(labels[i, j]), int(labels[a, b])))))
    return pairs


def test_rag_single_region():
    g = hi.build_rag(label_map(np.zeros((3, 3), int)))
    assert g.n == 1 and g.adj.nnz == 0


def test_rag_halves():
    labels = np.zeros((4, 4), int)
    labels[:, 2:] = 1
    g = hi.build_rag(label_map(labels))
    assert g.n == 2 and g.adj.edge_list().tolist() == [[0, 1]]


def test_rag_three_by_three_grid():
    labels = np.repeat(np.repeat(np.arange(9).reshape(3, 3), 2, 0), 2, 1)
    g = hi.build_rag(label_map(labels))
    assert g.adj.nnz // 2 == 12
    assert set(map(tuple, g.adj.edge_list().tolist())) == brute_force_adjacent_pairs(labels)


def test_rag_random_labels_match_brute_force(rng):
    labels = rng.integers(0, 6, (9, 11))
    g = hi.build_rag(label_map(labels))
    assert set(map(tuple, g.adj.edge_list().tolist())) == brute_force_adjacent_pairs(label_map(labels).labels)


def test_rag_node_attributes():
    labels = np.zeros((2, 4), int)
    labels[:, 3] = 1
    feats = np.arange(8.0).reshape(2, 4, 1)
    g = hi.build_rag(label_map(labels, feats))
    assert g.sizes.tolist() == [6, 2]
    assert g.feats[1, 0] == pytest.approx((3 + 7) / 2)
    assert g.centroids[1].tolist() == [0.5, 3.0]


def test_edge_weights():
    g = graph(2, [(0, 1)], feats=[[0, 0], [0, 0]])
    assert np.all(hi.edge_weights(g).vals == 0)
    g = graph(2, [(0, 1)], feats=[[1, 2], [4, 0]])
    assert hi.edge_weights(g).vals.tolist() == [5.0, 5.0]


def test_edge_weights_loop_oracle(rng):
    e, _ = random_connected_graph(rng, 10)
    feats = rng.normal(size=(10, 3))
    w = hi.edge_weights(graph(10, e, feats))
    for i, j, x in w.entries():
        assert x == pytest.approx(sum(abs(feats[i, d] - feats[j, d]) for d in range(3)), rel=1e-14)


def test_graph_rejects_self_loop():
    with pytest.raises(ValueError):
        hi.SpGraph(np.zeros((2, 1)), np.zeros((2, 2)), SparseAdj(2, [0, 0, 1], [0, 1, 0], [1, 1, 1.0]), np.ones(2))


def test_merge_path():
    g = graph(3, [(0, 1), (1, 2)], feats=[[0.0], [1.0], [3.0]])
    h = hi.boruvka_merge(g, [2])
    assert h.record.steps[0][:2] == (0, 1)
    assert h.fine_to_scale(1).tolist() == [0, 0, 1]
    assert h.scales[1].n == 2


def test_merge_triangle_total_weight():
    g = graph(3, [(0, 1), (1, 2), (0, 2)])
    w = SparseAdj.from_edges(3, [(0, 1), (1, 2), (0, 2)], [1.0, 2.0, 3.0])
    h = hi.boruvka_merge(g, [1], w)
    assert sum(s[2] for s in h.record.steps) == 3.0
    assert sorted(s[:2] for s in h.record.steps) == sorted(kruskal(3, [(0, 1), (1, 2), (0, 2)], [1, 2, 3]))


def test_single_merge_for_n_minus_one(rng):
    e, _ = random_connected_graph(rng, 12)
    h = hi.boruvka_merge(graph(12, e, rng.normal(size=(12, 2))), [11])
    assert len(h.record.steps) == 1 and h.scales[1].n == 11


def test_four_region_fixture_two_targets():
    labels = np.zeros((4, 4), int)
    labels[:2, 2:] = 1
    labels[2:, :2] = 2
    labels[2:, 2:] = 3
    feats = np.zeros((4, 4, 1))
    feats[:, 2:] = 10.0
    feats[2:, :2] = 1.0
    feats[2:, 2:] = 12.0
    g = hi.build_rag(label_map(labels, feats))
    h = hi.boruvka_merge(g, [2])
    # Kruskal: (0,2) weight 1 and (1,3) weight 2 merge first
    assert sorted(s[:2] for s in h.record.steps) == [(0, 2), (1, 3)]
    assert h.scales[1].n == 2 and h.scales[1].adj.edge_list().tolist() == [[0, 1]]
    assert h.fine_to_scale(1).tolist() == [0, 1, 0, 1]


def test_targets_validation():
    g = graph(4, [(0, 1), (1, 2), (2, 3)])
    for bad in ([2, 3], [4], [0], [2, 2]):
        with pytest.raises(ValueError):
            hi.boruvka_merge(g, bad)


def test_disconnected_graph_reports_components():
    g = graph(4, [(0, 1), (2, 3)])
    with pytest.raises(hi.DisconnectedGraphError) as exc:
        hi.boruvka_merge(g, [1])
    assert exc.value.n_components == 2
    assert "2 connected components" in str(exc.value)


def test_ties_follow_index_order():
    # all weights equal: the order is fixed by (i, j)
    g = graph(4, [(0, 1), (1, 2), (2, 3), (0, 3)])
    h = hi.boruvka_merge(g, [1])
    assert sorted(s[:2] for s in h.record.steps) == [(0, 1), (0, 3), (1, 2)]


def test_coarse_features_size_weighted():
    g = graph(3, [(0, 1), (1, 2)], feats=[[0.0], [3.0], [100.0]], sizes=np.array([1, 2, 5]))
    h = hi.boruvka_merge(g, [2])
    assert h.scales[1].feats[0, 0] == pytest.approx(2.0)
    assert h.scales[1].sizes.tolist() == [3, 5]


def test_coarsen_identity_and_additivity():
    ids = np.full((1, 1, 9), -1)
    ids[0, 0, 3:5] = [0, 1]
    probs = np.zeros((1, 1, 9))
    probs[0, 0, 3:5] = [0.3, 0.7]
    q = spx.SoftAssociation(probs, ids, 2)
    rec = hi.MergeRecord([(0, 1, 0.0, 0)], [np.array([0, 0])])
    same = hi.coarsen_association(q, rec, 0)
    assert np.array_equal(same.probs, q.probs) and np.array_equal(same.ids, q.ids)
    merged = hi.coarsen_association(q, rec, 1)
    assert merged.probs[0, 0][merged.ids[0, 0] == 0].tolist() == [1.0]
    with pytest.raises(ValueError):
        hi.coarsen_association(q, rec, 2)


def test_coarsen_random_rows_sum_to_one(rng):
    fm = PixelFeatureMap.from_features(rng.normal(size=(12, 12, 3)), 1.0)
    q, sp, _ = spx.cluster(fm, spx.ClusterConfig(4, 4, 2))
    conn = spx.enforce_connectivity(sp, fm)
    qn = spx.associate_to_labels(q, conn.labels, conn.n_superpixels)
    g = hi.build_rag(conn)
    h = hi.boruvka_merge(g, [max(1, g.n // 2), 1] if g.n > 2 else [1])
    for k in range(h.K):
        qk = hi.coarsen_association(qn, h.record, k)
        assert np.max(np.abs(qk.probs.sum(axis=2) - 1)) <= 1e-9
        # brute-force regrouping: total mass per coarse id equals summed fine mass
        fine_mass = np.bincount(qn.ids[qn.ids >= 0], weights=qn.probs[qn.ids >= 0], minlength=qn.n)
        coarse = np.bincount(h.fine_to_scale(k), weights=fine_mass)
        got = np.bincount(qk.ids[qk.ids >= 0], weights=qk.probs[qk.ids >= 0], minlength=qk.n)
        assert np.allclose(got, coarse, rtol=1e-12)


def test_hierarchy_json_roundtrip(tmp_path, rng):
    e, _ = random_connected_graph(rng, 15)
    g = graph(15, e, rng.normal(size=(15, 2)), rng.integers(1, 9, 15), rng.normal(size=(15, 2)))
    h = hi.boruvka_merge(g, [8, 3])
    hi.write_hierarchy(tmp_path / "h.json", h)
    back = hi.read_hierarchy(tmp_path / "h.json")
    assert back.K == 3
    for a, b in zip(h.scales, back.scales):
        assert np.array_equal(a.feats, b.feats) and np.array_equal(a.adj.to_dense(), b.adj.to_dense())
    assert back.record.steps == h.record.steps
    assert np.array_equal(back.fine_to_scale(2), h.fine_to_scale(2))
