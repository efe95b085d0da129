"""Center-difference graph convolution over superpixel graphs.

A layer aggregates, for every node i, its closed neighbourhood R_i (itself
plus graph neighbours). Each neighbour falls in one of three subsets by
comparing distances to the gravity center of the graph: d0 (same distance,
always including i itself), d1 (closer), d2 (farther). Subset s has its own
weight matrix unless the layer is tied.

Two forward paths are provided. :func:`cdgc_forward` evaluates per-edge
messages (vanilla and center-difference terms separately, then mixes them by
alpha). :func:`cdgc_matrix_forward` evaluates the tied-weight closed form
``(A H - alpha * rowsum(A) * H) W``. They are independent and serve as oracles
for each other.
"""

from __future__ import annotations

import csv
import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .hierarchy import ScaleHierarchy, SpGraph, coarsen_association
from .imageio import PixelFeatureMap
from .numerics import Rng, SparseAdj, as_dense, relu, relu_grad, row_sums, segment_sum, spmm
from .superpixel import SoftAssociation, association_matrix, reconstruct_pixels

__all__ = [
    "D0",
    "D1",
    "D2",
    "CdgcLayer",
    "PartitionMap",
    "ForwardCache",
    "LayerGrads",
    "MdgcnStack",
    "partition",
    "gcn_forward",
    "cdgc_forward",
    "cdgc_matrix_forward",
    "layer_gradients",
    "project_pixels_to_nodes",
    "smooth_pixels",
    "stack_forward",
    "write_weights",
    "read_weights",
    "write_embeddings_csv",
]

D0, D1, D2 = 0, 1, 2
ACTIVATIONS = ("none", "relu")


@dataclass
class CdgcLayer:
    """Weights ``w`` of shape (3, d_in, d_out), one block per subset d0/d1/d2."""

    w: np.ndarray
    alpha: float = 0.0
    activation: str = "none"
    tied: bool = False

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64)
        if w.ndim == 2:
            w = np.stack([w, w, w])
            self.tied = True
        if w.ndim != 3 or w.shape[0] != 3:
            raise ValueError("weights must have shape (3, d_in, d_out) or (d_in, d_out)")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        if self.tied and not (np.array_equal(w[0], w[1]) and np.array_equal(w[0], w[2])):
            raise ValueError("tied layer needs identical subset weights")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        self.w = w

    @classmethod
    def init(cls, rng: Rng, d_in: int, d_out: int, alpha: float = 0.0, activation: str = "none", tied: bool = True) -> "CdgcLayer":
        if tied:
            return cls(rng.glorot(d_in, d_out), alpha, activation, True)
        return cls(np.stack([rng.glorot(d_in, d_out) for _ in range(3)]), alpha, activation, False)

    @property
    def d_in(self) -> int:
        return self.w.shape[1]

    @property
    def d_out(self) -> int:
        return self.w.shape[2]

    def activate(self, x: np.ndarray) -> np.ndarray:
        return relu(x) if self.activation == "relu" else x

    def activate_grad(self, x: np.ndarray) -> np.ndarray:
        return relu_grad(x) if self.activation == "relu" else np.ones_like(x)


@dataclass
class PartitionMap:
    """Subset label and normalizer for every (i, j) entry of the normalized adjacency.

    Entries are aligned with ``g.norm_adj`` (sorted by row, then column).
    """

    rows: np.ndarray
    cols: np.ndarray
    labels: np.ndarray
    z: np.ndarray
    gravity_center: np.ndarray
    radii: np.ndarray

    def label_of(self, i: int, j: int) -> int:
        hit = np.flatnonzero((self.rows == i) & (self.cols == j))
        if hit.size == 0:
            raise KeyError((i, j))
        return int(self.labels[hit[0]])


def partition(g: SpGraph, z_mode: str = "none", tol: float = 1e-9) -> PartitionMap:
    """Split each closed neighbourhood by distance to the centroid mean.

    ``z_mode="none"`` keeps the normalized adjacency as the only normalizer;
    ``z_mode="subset"`` additionally divides by the size of the subset that
    contains j within R_i.
    """
    if z_mode not in ("none", "subset"):
        raise ValueError(f"unknown z_mode {z_mode!r}")
    a = g.norm_adj
    gravity = g.centroids.mean(axis=0) if g.n else np.zeros(2)
    radii = np.linalg.norm(g.centroids - gravity, axis=1)
    ri, rj = radii[a.rows], radii[a.cols]
    labels = np.where(rj < ri, D1, D2).astype(np.int64)
    labels[np.abs(rj - ri) <= tol] = D0
    labels[a.rows == a.cols] = D0
    if z_mode == "subset":
        counts = np.zeros((g.n, 3), dtype=np.int64)
        np.add.at(counts, (a.rows, labels), 1)
        z = counts[a.rows, labels].astype(np.float64)
    else:
        z = np.ones(a.nnz)
    return PartitionMap(a.rows, a.cols, labels, z, gravity, radii)


def _coef(g: SpGraph, pmap: PartitionMap) -> np.ndarray:
    a = g.norm_adj
    if not (np.array_equal(a.rows, pmap.rows) and np.array_equal(a.cols, pmap.cols)):
        raise ValueError("partition map does not belong to this graph")
    return a.vals / pmap.z


def _input(g: SpGraph, layer: CdgcLayer, h) -> np.ndarray:
    h = g.feats if h is None else as_dense(h, "h")
    if h.shape[0] != g.n:
        raise ValueError(f"h has {h.shape[0]} rows, graph has {g.n} nodes")
    if h.shape[1] != layer.d_in:
        raise ValueError(f"dimension mismatch: layer expects {layer.d_in} features, got {h.shape[1]}")
    return h


def _apply_by_subset(x: np.ndarray, labels: np.ndarray, w: np.ndarray) -> np.ndarray:
    out = np.empty((x.shape[0], w.shape[2]))
    for s in (D0, D1, D2):
        m = labels == s
        out[m] = x[m] @ w[s]
    return out


def _vanilla_messages(g, layer, pmap, h) -> np.ndarray:
    coef = _coef(g, pmap)
    msg = coef[:, None] * _apply_by_subset(h[pmap.cols], pmap.labels, layer.w)
    return segment_sum(msg, g.norm_adj.indptr)


def gcn_forward(g: SpGraph, layer: CdgcLayer, pmap: PartitionMap, h=None) -> np.ndarray:
    """Partitioned graph convolution: sum_j coef_ij h_j W_eta(i,j), then activation."""
    h = _input(g, layer, h)
    return layer.activate(_vanilla_messages(g, layer, pmap, h))


@dataclass
class ForwardCache:
    graph: SpGraph
    layer: CdgcLayer
    pmap: PartitionMap
    h: np.ndarray
    pre: np.ndarray
    out: np.ndarray


def cdgc_forward(g: SpGraph, layer: CdgcLayer, pmap: PartitionMap, h=None, return_cache: bool = False):
    """alpha * (center-difference term) + (1 - alpha) * (vanilla term), then activation."""
    h = _input(g, layer, h)
    coef = _coef(g, pmap)
    diff = h[pmap.cols] - h[pmap.rows]
    diff_msg = coef[:, None] * _apply_by_subset(diff, pmap.labels, layer.w)
    diff_term = segment_sum(diff_msg, g.norm_adj.indptr)
    vanilla = _vanilla_messages(g, layer, pmap, h)
    pre = layer.alpha * diff_term + (1.0 - layer.alpha) * vanilla
    out = layer.activate(pre)
    if return_cache:
        return out, ForwardCache(g, layer, pmap, h, pre, out)
    return out


def _operator(g: SpGraph, pmap: PartitionMap, mask=None) -> SparseAdj:
    coef = _coef(g, pmap)
    if mask is None:
        return SparseAdj(g.n, pmap.rows, pmap.cols, coef, symmetric=False)
    return SparseAdj(g.n, pmap.rows[mask], pmap.cols[mask], coef[mask], symmetric=False)


def cdgc_matrix_forward(g: SpGraph, layer: CdgcLayer, pmap: PartitionMap, h=None) -> np.ndarray:
    """Closed form for tied weights: activation((A H - alpha * Abar * H) W)."""
    if not layer.tied:
        raise ValueError("the matrix form requires tied subset weights")
    h = _input(g, layer, h)
    a = _operator(g, pmap)
    pre = (spmm(a, h) - layer.alpha * row_sums(a)[:, None] * h) @ layer.w[0]
    return layer.activate(pre)


@dataclass
class LayerGrads:
    w: np.ndarray  # (3, d_in, d_out); for tied layers (d_in, d_out)
    alpha: float
    h: np.ndarray


def layer_gradients(cache: ForwardCache | None, upstream) -> LayerGrads:
    """Exact gradients of sum(upstream * output) with respect to W, alpha and H."""
    if cache is None:
        raise ValueError("missing forward cache; run cdgc_forward(..., return_cache=True) first")
    g, layer, pmap, h = cache.graph, cache.layer, cache.pmap, cache.h
    up = as_dense(upstream, "upstream")
    if up.shape != cache.out.shape:
        raise ValueError("upstream shape does not match layer output")
    gp = up * layer.activate_grad(cache.pre)
    gw = np.zeros_like(layer.w)
    g_alpha = 0.0
    gh = np.zeros_like(h)
    for s in (D0, D1, D2):
        a_s = _operator(g, pmap, pmap.labels == s)
        rs = row_sums(a_s)[:, None]
        scaled = rs * h
        m_s = spmm(a_s, h) - layer.alpha * scaled
        gw[s] = m_s.T @ gp
        g_alpha -= float(np.sum(gp * (scaled @ layer.w[s])))
        back = gp @ layer.w[s].T
        a_t = SparseAdj(g.n, a_s.cols, a_s.rows, a_s.vals, symmetric=False)
        gh += spmm(a_t, back) - layer.alpha * rs * back
    if layer.tied:
        gw = gw.sum(axis=0)
    return LayerGrads(gw, g_alpha, gh)


# --- pixels to nodes ----------------------------------------------------------


def project_pixels_to_nodes(fm: PixelFeatureMap, q: SoftAssociation) -> np.ndarray:
    """Node features as the column-normalized association applied to pixel appearance features."""
    if q.probs.shape[:2] != (fm.height, fm.width):
        raise ValueError("association and feature map sizes differ")
    qm = association_matrix(q).tocsc()
    colsum = np.asarray(qm.sum(axis=0)).ravel()
    feats = fm.features.reshape(-1, fm.n_features)
    out = np.asarray(qm.T @ feats)
    has = colsum > 0
    out[has] /= colsum[has, None]
    return out


def smooth_pixels(fm: PixelFeatureMap, q: SoftAssociation) -> np.ndarray:
    """Per-pixel features after projecting to nodes and back (row-normalized)."""
    return reconstruct_pixels(q, project_pixels_to_nodes(fm, q))


# --- multiscale stack ---------------------------------------------------------


@dataclass
class MdgcnStack:
    """``layers[k]`` is the list of gamma layers applied at scale k."""

    layers: list[list[CdgcLayer]]
    z_mode: str = "none"
    meta: dict = field(default_factory=dict)

    @classmethod
    def init(
        cls,
        seed: int,
        d_in: int,
        d_hidden: int,
        d_out: int,
        n_scales: int,
        gamma: int = 2,
        alpha: float = 0.4,
        tied: bool = True,
        z_mode: str = "none",
    ) -> "MdgcnStack":
        if gamma < 1:
            raise ValueError("gamma must be >= 1")
        rng = Rng(seed)
        dims = [d_in] + [d_hidden] * (gamma - 1) + [d_out]
        layers = []
        for _ in range(n_scales):
            stack = []
            for l in range(gamma):
                act = "relu" if l < gamma - 1 else "none"
                stack.append(CdgcLayer.init(rng, dims[l], dims[l + 1], alpha, act, tied))
            layers.append(stack)
        meta = {"dims": dims, "alpha": alpha, "gamma": gamma, "seed": seed, "tied": tied, "z_mode": z_mode}
        return cls(layers, z_mode, meta)

    @property
    def gamma(self) -> int:
        return len(self.layers[0]) if self.layers else 0


def _run_scale(k, hier, fm, q, stack) -> np.ndarray:
    g = hier.scales[k]
    qk = coarsen_association(q, hier.record, k)
    if qk.n != g.n:
        raise ValueError(f"scale {k}: association has {qk.n} targets, graph has {g.n} nodes")
    x = project_pixels_to_nodes(fm, qk)
    pmap = partition(g, stack.z_mode)
    for l, layer in enumerate(stack.layers[k]):
        if x.shape[1] != layer.d_in:
            raise ValueError(
                f"scale {k}, layer {l}: expects {layer.d_in} input features, got {x.shape[1]}"
            )
        x = cdgc_forward(g, layer, pmap, x)
    return x


def stack_forward(hier: ScaleHierarchy, fm: PixelFeatureMap, q: SoftAssociation, stack: MdgcnStack, threads: int = 1) -> list[np.ndarray]:
    """Node embeddings per scale; ``q`` must target the finest-scale nodes."""
    if len(stack.layers) != hier.K:
        raise ValueError(f"stack has {len(stack.layers)} scales, hierarchy has {hier.K}")
    ks = range(hier.K)
    if threads > 1 and hier.K > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda k: _run_scale(k, hier, fm, q, stack), ks))
    return [_run_scale(k, hier, fm, q, stack) for k in ks]


# --- serialization ---------------------------------------------------------


def write_weights(path, stack: MdgcnStack) -> None:
    """Length-prefixed JSON header followed by all weights as little-endian float64."""
    header = dict(stack.meta)
    header["shapes"] = [[list(layer.w.shape) for layer in scale] for scale in stack.layers]
    blob = b"".join(layer.w.astype("<f8").tobytes() for scale in stack.layers for layer in scale)
    hb = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(hb)) + hb + blob)


def read_weights(path) -> MdgcnStack:
    data = Path(path).read_bytes()
    (hlen,) = struct.unpack("<I", data[:4])
    header = json.loads(data[4 : 4 + hlen])
    flat = np.frombuffer(data[4 + hlen :], dtype="<f8")
    pos = 0
    layers = []
    for scale_shapes in header["shapes"]:
        stack = []
        for l, shape in enumerate(scale_shapes):
            size = int(np.prod(shape))
            w = flat[pos : pos + size].reshape(shape).astype(np.float64)
            pos += size
            act = "relu" if l < len(scale_shapes) - 1 else "none"
            stack.append(CdgcLayer(w, header["alpha"], act, header.get("tied", False)))
        layers.append(stack)
    return MdgcnStack(layers, header.get("z_mode", "none"), {k: v for k, v in header.items() if k != "shapes"})


def write_embeddings_csv(path, embeddings: list[np.ndarray]) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        width = embeddings[0].shape[1] if embeddings else 0
        wr.writerow(["node", "scale"] + [f"v{d}" for d in range(width)])
        for k, emb in enumerate(embeddings):
            for i, row in enumerate(emb):
                wr.writerow([i, k] + [repr(float(v)) for v in row])
