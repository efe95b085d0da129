"""Region adjacency graphs and Boruvka-driven progressive region merging."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .numerics import SparseAdj, normalize_adjacency, row_sums
from .superpixel import SoftAssociation, SuperpixelMap, merge_duplicate_candidates

__all__ = [
    "SpGraph",
    "MergeRecord",
    "ScaleHierarchy",
    "DisconnectedGraphError",
    "build_rag",
    "edge_weights",
    "boruvka_merge",
    "coarsen_association",
    "hierarchy_to_dict",
    "hierarchy_from_dict",
    "write_hierarchy",
    "read_hierarchy",
]


class DisconnectedGraphError(ValueError):
    def __init__(self, n_components: int, target: int):
        super().__init__(
            f"graph has {n_components} connected components; cannot merge down to {target} regions"
        )
        self.n_components = n_components
        self.target = target


@dataclass
class SpGraph:
    """Superpixel graph at one scale: node features, centroids, sizes and binary adjacency."""

    feats: np.ndarray
    centroids: np.ndarray
    adj: SparseAdj
    sizes: np.ndarray
    scale_id: int = 0

    def __post_init__(self):
        self.feats = np.asarray(self.feats, dtype=np.float64)
        self.centroids = np.asarray(self.centroids, dtype=np.float64).reshape(-1, 2)
        self.sizes = np.asarray(self.sizes, dtype=np.int64)
        if self.feats.ndim != 2 or self.feats.shape[0] != self.adj.n:
            raise ValueError("feature rows must match the adjacency size")
        if not np.all(np.isfinite(self.feats)):
            raise ValueError("node features must be finite")
        if np.any(self.adj.rows == self.adj.cols):
            raise ValueError("raw adjacency must not contain self-loops")

    @property
    def n(self) -> int:
        return self.adj.n

    @cached_property
    def norm_adj(self) -> SparseAdj:
        return normalize_adjacency(self.adj)

    @cached_property
    def norm_row_sums(self) -> np.ndarray:
        return row_sums(self.norm_adj)


@dataclass
class MergeRecord:
    """Accepted MST edges in the order they joined, and per-scale parent maps.

    ``steps`` holds (i, j, weight, step) with finest-scale node ids.
    ``parent_maps[k - 1]`` maps scale k-1 node ids to scale k node ids.
    """

    steps: list[tuple[int, int, float, int]] = field(default_factory=list)
    parent_maps: list[np.ndarray] = field(default_factory=list)

    def fine_to_scale(self, k: int, n_fine: int) -> np.ndarray:
        if k < 0 or k > len(self.parent_maps):
            raise ValueError(f"scale {k} out of range 0..{len(self.parent_maps)}")
        m = np.arange(n_fine)
        for pm in self.parent_maps[:k]:
            m = pm[m]
        return m


@dataclass
class ScaleHierarchy:
    scales: list[SpGraph]
    record: MergeRecord

    @property
    def K(self) -> int:
        return len(self.scales)

    def fine_to_scale(self, k: int) -> np.ndarray:
        return self.record.fine_to_scale(k, self.scales[0].n)


def build_rag(sp: SuperpixelMap) -> SpGraph:
    """Binary adjacency between regions that share a 4-connected boundary."""
    labels = np.asarray(sp.labels, dtype=np.int64)
    a = np.concatenate([labels[:, 1:].ravel(), labels[1:, :].ravel()])
    b = np.concatenate([labels[:, :-1].ravel(), labels[:-1, :].ravel()])
    diff = a != b
    pairs = np.stack([np.minimum(a[diff], b[diff]), np.maximum(a[diff], b[diff])], axis=1)
    pairs = np.unique(pairs, axis=0) if pairs.size else pairs.reshape(0, 2)
    adj = SparseAdj.from_edges(sp.n_superpixels, pairs)
    return SpGraph(sp.centers_u, sp.centers_r, adj, sp.sizes)


def edge_weights(g: SpGraph) -> SparseAdj:
    """L1 distance between the features of every adjacent pair."""
    w = np.sum(np.abs(g.feats[g.adj.rows] - g.feats[g.adj.cols]), axis=1)
    return SparseAdj(g.n, g.adj.rows, g.adj.cols, w)


def _validate_targets(n: int, targets) -> list[int]:
    targets = [int(t) for t in targets]
    for t in targets:
        if t < 1 or t >= n:
            raise ValueError(f"target {t} outside [1, {n - 1}]")
    if any(b >= a for a, b in zip(targets, targets[1:])):
        raise ValueError(f"targets must be strictly decreasing, got {targets}")
    return targets


def _snapshot(g: SpGraph, roots: np.ndarray, scale_id: int) -> tuple[SpGraph, np.ndarray]:
    """Coarse graph whose nodes are the current trees, numbered by smallest member id."""
    _, first = np.unique(roots, return_index=True)
    order = np.sort(first)
    coarse_of_root = {int(roots[i]): c for c, i in enumerate(order)}
    fine_to_coarse = np.array([coarse_of_root[int(r)] for r in roots], dtype=np.int64)
    m = order.size
    size = np.bincount(fine_to_coarse, weights=g.sizes, minlength=m)
    w = g.sizes.astype(np.float64)[:, None]
    feats = np.zeros((m, g.feats.shape[1]))
    cents = np.zeros((m, 2))
    np.add.at(feats, fine_to_coarse, w * g.feats)
    np.add.at(cents, fine_to_coarse, w * g.centroids)
    feats /= size[:, None]
    cents /= size[:, None]
    e = g.adj.edge_list()
    ce = fine_to_coarse[e]
    ce = ce[ce[:, 0] != ce[:, 1]]
    ce = np.unique(np.sort(ce, axis=1), axis=0) if ce.size else ce.reshape(0, 2)
    adj = SparseAdj.from_edges(m, ce)
    return SpGraph(feats, cents, adj, size.astype(np.int64), scale_id), fine_to_coarse


def boruvka_merge(g: SpGraph, targets, weights: SparseAdj | None = None) -> ScaleHierarchy:
    """Progressively merge regions along the MST until each target count is reached.

    Edge weights are fixed on the input graph (L1 feature distance unless
    ``weights`` is given). Edges are strictly ordered by (weight, i, j) so the
    MST is unique. Each Boruvka round selects every tree's lightest outgoing
    edge; the selected edges are then applied one at a time in that order, so
    every intermediate tree count is observed and snapshots land exactly on
    the targets.
    """
    n = g.n
    targets = _validate_targets(n, targets)
    if weights is None:
        weights = edge_weights(g)
    keep = weights.rows < weights.cols
    ei, ej, ew = weights.rows[keep], weights.cols[keep], weights.vals[keep]
    order = np.lexsort((ej, ei, ew))
    ei, ej, ew = ei[order], ej[order], ew[order]
    m = ei.size

    parent = np.arange(n)
    tsize = np.ones(n, dtype=np.int64)

    def find(x: int) -> int:
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    def all_roots() -> np.ndarray:
        p = parent.copy()
        while True:
            pp = p[p]
            if np.array_equal(pp, p):
                return p
            p = pp

    scales = [g]
    record = MergeRecord()
    prev_map = np.arange(n)
    count = n
    pending = list(targets)
    step = 0
    while pending:
        roots = all_roots()
        ri, rj = roots[ei], roots[ej]
        out = ri != rj
        if not np.any(out):
            raise DisconnectedGraphError(count, pending[0])
        # edge index doubles as its rank in the strict order
        best = np.full(n, m, dtype=np.int64)
        idx = np.flatnonzero(out)
        np.minimum.at(best, ri[out], idx)
        np.minimum.at(best, rj[out], idx)
        chosen = np.unique(best[best < m])
        for e in chosen:
            a, b = find(int(ei[e])), find(int(ej[e]))
            if a == b:
                continue
            if tsize[a] < tsize[b] or (tsize[a] == tsize[b] and b < a):
                a, b = b, a
            parent[b] = a
            tsize[a] += tsize[b]
            count -= 1
            record.steps.append((int(ei[e]), int(ej[e]), float(ew[e]), step))
            step += 1
            if count == pending[0]:
                coarse, fine_to_coarse = _snapshot(g, all_roots(), len(scales))
                pm = np.zeros(scales[-1].n, dtype=np.int64)
                pm[prev_map] = fine_to_coarse
                record.parent_maps.append(pm)
                scales.append(coarse)
                prev_map = fine_to_coarse
                pending.pop(0)
                if not pending:
                    break
    return ScaleHierarchy(scales, record)


def coarsen_association(q: SoftAssociation, record: MergeRecord, k: int) -> SoftAssociation:
    """Project a finest-scale association onto scale ``k`` by summing merged candidates."""
    if k < 0 or k > len(record.parent_maps):
        raise ValueError(f"scale {k} out of range 0..{len(record.parent_maps)}")
    if k == 0:
        return SoftAssociation(q.probs.copy(), q.ids.copy(), q.n, q.grid_w, q.grid_h, q.cell_of)
    m = record.fine_to_scale(k, q.n)
    mapped = np.where(q.ids >= 0, m[np.maximum(q.ids, 0)], -1)
    ids, probs = merge_duplicate_candidates(mapped, np.where(q.ids >= 0, q.probs, 0.0))
    return SoftAssociation(probs, ids, int(m.max()) + 1 if m.size else 0)


# --- serialization ---------------------------------------------------------


def _graph_dict(g: SpGraph) -> dict:
    w = edge_weights(g)
    keep = w.rows < w.cols
    return {
        "n": g.n,
        "nodes": [
            {"id": i, "feat": g.feats[i].tolist(), "centroid": g.centroids[i].tolist(), "size": int(g.sizes[i])}
            for i in range(g.n)
        ],
        "edges": [[int(i), int(j), float(x)] for i, j, x in zip(w.rows[keep], w.cols[keep], w.vals[keep])],
    }


def hierarchy_to_dict(h: ScaleHierarchy) -> dict:
    return {
        "K": h.K,
        "scales": [_graph_dict(g) for g in h.scales],
        "parent_maps": [pm.tolist() for pm in h.record.parent_maps],
        "steps": [list(s) for s in h.record.steps],
    }


def hierarchy_from_dict(doc: dict) -> ScaleHierarchy:
    scales = []
    for k, sd in enumerate(doc["scales"]):
        n = sd["n"]
        feats = np.array([nd["feat"] for nd in sd["nodes"]], dtype=np.float64).reshape(n, -1)
        cents = np.array([nd["centroid"] for nd in sd["nodes"]], dtype=np.float64).reshape(n, 2)
        sizes = np.array([nd["size"] for nd in sd["nodes"]], dtype=np.int64)
        edges = np.array([e[:2] for e in sd["edges"]], dtype=np.int64).reshape(-1, 2)
        scales.append(SpGraph(feats, cents, SparseAdj.from_edges(n, edges), sizes, k))
    record = MergeRecord(
        [tuple(s) for s in doc["steps"]],
        [np.asarray(pm, dtype=np.int64) for pm in doc["parent_maps"]],
    )
    return ScaleHierarchy(scales, record)


def write_hierarchy(path, h: ScaleHierarchy) -> None:
    Path(path).write_text(json.dumps(hierarchy_to_dict(h)))


def read_hierarchy(path) -> ScaleHierarchy:
    return hierarchy_from_dict(json.loads(Path(path).read_text()))
