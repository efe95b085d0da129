"""Acceptance criteria, each checked at its stated tolerance.

Every test records one PASS/FAIL line that is echoed in the terminal summary.
"""

import os
import subprocess
import sys
import time

import numpy as np
import pytest
from scipy.sparse.csgraph import connected_components
from scipy import sparse

from supergraph import cdgc as cd
from supergraph import fusion as fu
from supergraph import hierarchy as hi
from supergraph import superpixel as spx
from supergraph.imageio import PixelFeatureMap, srgb_to_lab, synthetic_scene, write_ppm
from supergraph.numerics import SparseAdj, rel_error
from supergraph.verify import cdgc_gradcheck_fixture, kruskal, random_connected_graph, tree_fixture, two_tone

from conftest import ACCEPTANCE_LINES


def report(n: int, ok: bool, title: str, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {title} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def cli(*args, threads=1, timeout=600):
    env = dict(os.environ, SUPERGRAPH_THREADS=str(threads))
    return subprocess.run([sys.executable, "-m", "supergraph", *map(str, args)], capture_output=True, text=True, env=env, timeout=timeout)


def random_graph(rng, n, d):
    e, _ = random_connected_graph(rng, n)
    adj = SparseAdj.from_edges(n, e) if n > 1 else SparseAdj(n, [], [], [])
    return hi.SpGraph(rng.normal(size=(n, d)), rng.normal(size=(n, 2)) * 5, adj, np.ones(n, int))


def random_assoc(rng, h, w, gw, gh):
    cell_of, ids = spx.grid_candidates(h, w, gw, gh)
    p = rng.random(ids.shape) * (ids >= 0)
    p /= p.sum(axis=2, keepdims=True)
    return spx.SoftAssociation(p, ids, gw * gh, gw, gh, cell_of)


def test_criterion_01_soft_association_sanity():
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst_sum, oob = 0.0, 0.0
    for _ in range(50):
        fm = PixelFeatureMap.from_features(rng.normal(size=(16, 16, 3)) * 20, float(rng.uniform(0.1, 2)))
        cfg = spx.ClusterConfig(int(rng.integers(1, 9)), int(rng.integers(1, 9)), 3, temperature=float(rng.uniform(0.5, 50)))
        q, _, _ = spx.cluster(fm, cfg)
        worst_sum = max(worst_sum, float(np.max(np.abs(q.probs.sum(axis=2) - 1))))
        oob = max(oob, float(np.max(np.abs(q.probs[q.ids < 0]))) if np.any(q.ids < 0) else 0.0)
    elapsed = time.perf_counter() - t0
    ok = worst_sum <= 1e-9 and oob == 0.0 and elapsed < 5
    report(1, ok, "soft-association sanity", f"max |row sum - 1| {worst_sum:.1e}, out-of-bounds mass {oob}, {elapsed:.2f}s")


def test_criterion_02_center_duality():
    rng = np.random.default_rng(102)
    worst = 0.0
    for _ in range(20):
        h, w = int(rng.integers(4, 20)), int(rng.integers(4, 20))
        fm = PixelFeatureMap.from_features(rng.normal(size=(h, w, 3)) * 10, 0.5)
        q = random_assoc(rng, h, w, int(rng.integers(1, min(h, w, 6) + 1)), int(rng.integers(1, min(h, w, 6) + 1)))
        loop = spx.compute_centers(fm, q)
        u, r = spx.centers_matrix_form(fm, q)
        worst = max(worst, rel_error(loop.centers_u, u), rel_error(loop.centers_r, r))
    report(2, worst <= 1e-12, "center duality", f"max rel err {worst:.2e}")


def test_criterion_03_two_tone():
    img = two_tone(17, 16)
    fm = PixelFeatureMap.from_features(srgb_to_lab(img.data), 1.0)
    _, sp, trace = spx.cluster(fm, spx.ClusterConfig(2, 1, 5))
    # brute force: the expected label of each pixel is its colour side
    expect = np.array([[int(img.data[i, j, 0] > 127) for j in range(17)] for i in range(16)])
    ok = np.array_equal(sp.labels, expect) and trace[-1][0] < trace[0][0]
    report(3, ok, "two-tone segmentation", f"labels exact={np.array_equal(sp.labels, expect)}, loss_rec {trace[0][0]:.4g} -> {trace[-1][0]:.3g}")


def test_criterion_04_mst_oracle():
    rng = np.random.default_rng(104)
    t0 = time.perf_counter()
    mismatches = 0
    for t in range(200):
        n = int(rng.integers(2, 65))
        e, w = random_connected_graph(rng, n, extra=float(rng.uniform(0, 2)), integer_weights=bool(t % 2))
        g = hi.SpGraph(np.zeros((n, 1)), np.zeros((n, 2)), SparseAdj.from_edges(n, e), np.ones(n, int))
        h = hi.boruvka_merge(g, [1], SparseAdj.from_edges(n, e, w))
        got = sorted(s[:2] for s in h.record.steps)
        ref = sorted(kruskal(n, e.tolist(), w.tolist()))
        wmap = {(int(a), int(b)): float(x) for (a, b), x in zip(e, w)}
        if got != ref or sum(wmap[p] for p in got) != sum(wmap[p] for p in ref):
            mismatches += 1
    elapsed = time.perf_counter() - t0
    report(4, mismatches == 0 and elapsed < 10, "MST oracle equivalence", f"{mismatches} mismatches in 200 graphs, {elapsed:.2f}s")


def test_criterion_05_merge_accounting():
    rng = np.random.default_rng(105)
    bad = 0
    for _ in range(50):
        n = int(rng.integers(3, 80))
        g = random_graph(rng, n, 3)
        L = int(rng.integers(1, n))
        h = hi.boruvka_merge(g, [L])
        parents = np.unique(h.fine_to_scale(1)).size
        nc, _ = connected_components(sparse.csr_matrix(h.scales[1].adj.to_dense()), directed=False)
        if len(h.record.steps) != n - L or parents != L or h.scales[1].n != L or nc != 1:
            bad += 1
    report(5, bad == 0, "merge accounting", f"{bad} of 50 hierarchies violate L0 - L merges / L parents")


def test_criterion_06_nodewise_equals_matrix_form():
    rng = np.random.default_rng(106)
    worst = 0.0
    for _ in range(100):
        n, d = int(rng.integers(1, 33)), int(rng.integers(1, 9))
        g = random_graph(rng, n, d)
        w = rng.normal(size=(d, int(rng.integers(1, 9))))
        p = cd.partition(g)
        for alpha in (0.0, 0.3, 0.4, 1.0):
            layer = cd.CdgcLayer(w, alpha)
            worst = max(worst, rel_error(cd.cdgc_forward(g, layer, p), cd.cdgc_matrix_forward(g, layer, p)))
    report(6, worst <= 1e-12, "node-wise and matrix CDGC forms agree", f"max rel err {worst:.2e} over 100 graphs x 4 alphas")


def test_criterion_07_vanilla_degeneration():
    rng = np.random.default_rng(107)
    worst = 0.0
    for _ in range(100):
        n, d = int(rng.integers(1, 33)), int(rng.integers(1, 9))
        g = random_graph(rng, n, d)
        tied = bool(rng.integers(0, 2))
        w = rng.normal(size=(d, 4)) if tied else rng.normal(size=(3, d, 4))
        layer = cd.CdgcLayer(w, 0.0, str(rng.choice(["none", "relu"])))
        p = cd.partition(g, str(rng.choice(["none", "subset"])))
        worst = max(worst, rel_error(cd.cdgc_forward(g, layer, p), cd.gcn_forward(g, layer, p)))
    report(7, worst <= 1e-12, "alpha=0 equals vanilla GCN", f"max rel err {worst:.2e}")


def test_criterion_08_constant_input_annihilation():
    rng = np.random.default_rng(108)
    worst_diff = worst_mix = 0.0
    for _ in range(100):
        n, d = int(rng.integers(1, 33)), int(rng.integers(1, 9))
        g = random_graph(rng, n, d)
        h = np.tile(rng.normal(size=d), (n, 1))
        w = rng.normal(size=(3, d, 3))
        p = cd.partition(g, str(rng.choice(["none", "subset"])))
        vanilla = cd.gcn_forward(g, cd.CdgcLayer(w, 0.0), p, h)
        # alpha = 1 isolates the difference term
        worst_diff = max(worst_diff, float(np.max(np.abs(cd.cdgc_forward(g, cd.CdgcLayer(w, 1.0), p, h)))))
        for alpha in (0.3, 0.4):
            out = cd.cdgc_forward(g, cd.CdgcLayer(w, alpha), p, h)
            worst_mix = max(worst_mix, float(np.max(np.abs(out - (1 - alpha) * vanilla))))
    ok = worst_diff <= 1e-12 and worst_mix <= 1e-12
    report(8, ok, "constant-input annihilation", f"difference term max {worst_diff:.1e}; output = (1-alpha) * vanilla within {worst_mix:.1e}")


def test_criterion_09_gradient_checks():
    t0 = time.perf_counter()
    worst_cdgc = 0.0
    for s in range(20):
        for tied in (False, True):
            worst_cdgc = max(worst_cdgc, max(cdgc_gradcheck_fixture(5000 + s, tied=tied).values()))
    worst_tree = 0.0
    for s in range(20):
        t, cell, up = tree_fixture(6000 + s)
        rep = fu.cell_gradcheck(cell, t, up)
        worst_tree = max(worst_tree, max(rep.errors.values()))
    elapsed = time.perf_counter() - t0
    ok = worst_cdgc <= 1e-5 and worst_tree <= 1e-5 and elapsed < 30
    report(9, ok, "gradient checks", f"CDGC max rel {worst_cdgc:.1e}, Tree-LSTM max rel {worst_tree:.1e}, 20 seeds each, {elapsed:.1f}s")


def test_criterion_10_projection_consistency():
    rng = np.random.default_rng(110)
    worst = 0.0
    for _ in range(20):
        h, w = int(rng.integers(4, 20)), int(rng.integers(4, 20))
        fm = PixelFeatureMap.from_features(rng.normal(size=(h, w, 3)) * 10, 0.5)
        q = random_assoc(rng, h, w, int(rng.integers(1, 5)), int(rng.integers(1, 5)))
        worst = max(worst, rel_error(cd.project_pixels_to_nodes(fm, q), spx.compute_centers(fm, q).centers_u))
    report(10, worst <= 1e-12, "projection consistency", f"max rel err {worst:.2e}")


def test_criterion_11_node_count_reduction(tmp_path):
    img = tmp_path / "scene640.ppm"
    write_ppm(img, synthetic_scene(640, 640, seed=0))
    r = cli("bench", img, "--out", tmp_path / "bench", "--grids", "128x128,64x64")
    assert r.returncode == 0, r.stderr
    rows = {}
    for line in (tmp_path / "bench" / "bench.csv").read_text().splitlines()[1:]:
        stage, nodes, edges, millis, nbytes = line.split(",")
        rows[stage] = int(nodes)
    pix, sp, coarse = rows["pixels"], rows["superpixels"], rows["scale_1"]
    ok = (pix, sp, coarse) == (409_600, 16_384, 4_096) and pix / sp >= 25
    report(11, ok, "node-count reduction", f"{pix} -> {sp} -> {coarse} nodes, {pix / sp:.1f}x; connected regions {rows['superpixels_regions']} / {rows['scale_1_regions']}")


def test_criterion_12_determinism(tmp_path):
    img = tmp_path / "scene.ppm"
    write_ppm(img, synthetic_scene(96, 80, seed=4))
    out = tmp_path / "out"
    snaps = []
    for threads in (1, 4):
        r = cli("pipeline", img, "--out", out, "--grid", "12x10", "--targets", "30", threads=threads)
        assert r.returncode == 0, r.stderr
        snaps.append({p.name: p.read_bytes() for p in sorted(out.iterdir()) if p.name != "timings.csv"})
    same = snaps[0] == snaps[1]
    report(12, same, "determinism", f"{len(snaps[0])} artifacts byte-identical under SUPERGRAPH_THREADS=1 and 4")


def test_criterion_13_end_to_end(tmp_path):
    img = tmp_path / "scene128.ppm"
    write_ppm(img, synthetic_scene(128, 128, seed=2))
    t0 = time.perf_counter()
    r = cli("pipeline", img, "--out", tmp_path / "out")
    elapsed = time.perf_counter() - t0
    assert r.returncode == 0, r.stderr
    v = cli("verify")
    ok = elapsed < 60 and v.returncode == 0 and (tmp_path / "out" / "fusion.json").exists()
    n_pass = sum(" PASS " in l for l in v.stdout.splitlines())
    report(13, ok, "end-to-end smoke", f"pipeline {elapsed:.1f}s on 128x128, verify exit {v.returncode} ({n_pass} suites passed)")
