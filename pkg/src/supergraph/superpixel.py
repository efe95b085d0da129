"""Soft pixel-superpixel clustering over a regular grid.

Every pixel considers the 3x3 block of grid cells around its home cell, so the
association tensor has shape (H, W, 9). Candidate slots are ordered row-major
over (d_row, d_col) in {-1, 0, 1}^2; slot 4 is the home cell. Candidates that
fall outside the grid carry id -1 and probability exactly 0.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from .imageio import PixelFeatureMap, read_pgm16, write_pgm16

logger = logging.getLogger(__name__)

N_CANDIDATES = 9
HOME_SLOT = 4

__all__ = [
    "N_CANDIDATES",
    "ClusterConfig",
    "SoftAssociation",
    "SuperpixelMap",
    "grid_candidates",
    "init_grid",
    "compute_centers",
    "centers_matrix_form",
    "association_matrix",
    "reconstruct_pixels",
    "update_association",
    "reconstruction_loss",
    "compactness_loss",
    "cluster",
    "compact_labels",
    "enforce_connectivity",
    "hard_centers",
    "merge_duplicate_candidates",
    "associate_to_labels",
    "write_label_map",
    "read_label_map",
]


@dataclass(frozen=True)
class ClusterConfig:
    grid_w: int = 16
    grid_h: int = 16
    iterations: int = 10
    pos_scale: float | None = None  # None: derive m / sqrt(H*W/N) with m = 10
    temperature: float = 1.0
    lambda_compact: float = 0.1
    seed: int = 0

    def validate(self, height: int, width: int) -> None:
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.grid_w < 1 or self.grid_h < 1:
            raise ValueError("grid dimensions must be >= 1")
        if self.grid_w > width or self.grid_h > height:
            raise ValueError(
                f"grid {self.grid_w}x{self.grid_h} larger than image {width}x{height}"
            )
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")

    @property
    def n_cells(self) -> int:
        return self.grid_w * self.grid_h


@dataclass
class SoftAssociation:
    """Per-pixel distribution over up to 9 candidate targets.

    ``ids[i, j, k]`` is the target index of slot k for pixel (i, j), or -1.
    Grid associations also record the grid shape and each pixel's home cell;
    associations projected onto merged regions leave those as ``None``.
    """

    probs: np.ndarray
    ids: np.ndarray
    n: int
    grid_w: int | None = None
    grid_h: int | None = None
    cell_of: np.ndarray | None = None

    @property
    def height(self) -> int:
        return self.probs.shape[0]

    @property
    def width(self) -> int:
        return self.probs.shape[1]

    @property
    def valid(self) -> np.ndarray:
        return self.ids >= 0

    def row_normalized(self) -> np.ndarray:
        return self.probs / self.probs.sum(axis=2, keepdims=True)

    def hard_ids(self) -> np.ndarray:
        """Per-pixel argmax target; ties go to the smaller target id."""
        probs = np.where(self.valid, self.probs, -1.0)
        best = probs.max(axis=2, keepdims=True)
        big = np.iinfo(np.int64).max
        cand = np.where((probs == best) & self.valid, self.ids, big)
        return cand.min(axis=2)


@dataclass
class SuperpixelMap:
    """Hard label field plus per-superpixel centers.

    While clustering, superpixels are indexed by grid cell and may be empty;
    maps returned by :func:`cluster`, :func:`compact_labels` and
    :func:`enforce_connectivity` are compact (every label nonempty).
    """

    labels: np.ndarray
    centers_u: np.ndarray
    centers_r: np.ndarray
    sizes: np.ndarray
    mass: np.ndarray | None = None
    cell_ids: np.ndarray | None = None  # source grid cell of each label, when known

    @property
    def n_superpixels(self) -> int:
        return int(self.centers_u.shape[0])

    @property
    def centers(self) -> np.ndarray:
        return np.concatenate([self.centers_u, self.centers_r], axis=1)


def _slot_major(a: np.ndarray) -> np.ndarray:
    """(H, W, K) -> contiguous (K, H*W), so per-slot slices are dense."""
    return np.ascontiguousarray(np.moveaxis(a.reshape(-1, a.shape[-1]), -1, 0))


def _gather_slots(ids: np.ndarray, table: np.ndarray):
    """Yield (k, valid mask, rows of ``table`` for slot k) with invalid slots reading row 0."""
    for k in range(ids.shape[0]):
        ok = ids[k] >= 0
        yield k, ok, table[np.where(ok, ids[k], 0)]


# --- grid geometry ------------------------------------------------------------


def grid_candidates(height: int, width: int, grid_w: int, grid_h: int) -> tuple[np.ndarray, np.ndarray]:
    """Home cell per pixel and the (H, W, 9) candidate id tensor."""
    gi = (np.arange(height) * grid_h) // height
    gj = (np.arange(width) * grid_w) // width
    row = np.broadcast_to(gi[:, None], (height, width))
    col = np.broadcast_to(gj[None, :], (height, width))
    cell_of = row * grid_w + col
    ids = np.full((height, width, N_CANDIDATES), -1, dtype=np.int64)
    k = 0
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            r = row + dr
            c = col + dc
            ok = (r >= 0) & (r < grid_h) & (c >= 0) & (c < grid_w)
            ids[:, :, k] = np.where(ok, r * grid_w + c, -1)
            k += 1
    return np.ascontiguousarray(cell_of), ids


def init_grid(fm: PixelFeatureMap, cfg: ClusterConfig) -> tuple[SoftAssociation, SuperpixelMap]:
    cfg.validate(fm.height, fm.width)
    cell_of, ids = grid_candidates(fm.height, fm.width, cfg.grid_w, cfg.grid_h)
    probs = np.zeros(ids.shape)
    probs[:, :, HOME_SLOT] = 1.0
    q = SoftAssociation(probs, ids, cfg.n_cells, cfg.grid_w, cfg.grid_h, cell_of)
    return q, compute_centers(fm, q)


# --- centers ------------------------------------------------------------------


def compute_centers(fm: PixelFeatureMap, q: SoftAssociation, previous: SuperpixelMap | None = None) -> SuperpixelMap:
    """Probability-weighted mean feature and location of every target.

    Accumulation is a scatter-add, slot by slot, over valid candidates in
    row-major pixel order. Targets without soft mass keep the centers of
    ``previous`` (or zeros) and are reported through ``mass == 0``.
    """
    if q.probs.shape[:2] != (fm.height, fm.width):
        raise ValueError("association and feature map sizes differ")
    mass = np.zeros(q.n)
    sums = np.zeros((q.n, fm.dim))
    ids, probs = _slot_major(q.ids), _slot_major(q.probs)
    pix = np.ascontiguousarray(fm.data.reshape(-1, fm.dim).T)
    for k in range(ids.shape[0]):
        ok = ids[k] >= 0
        tgt = np.where(ok, ids[k], 0)
        w = np.where(ok, probs[k], 0.0)
        mass += np.bincount(tgt, weights=w, minlength=q.n)
        for d in range(fm.dim):
            sums[:, d] += np.bincount(tgt, weights=w * pix[d], minlength=q.n)
    centers = np.zeros((q.n, fm.dim))
    has = mass > 0
    centers[has] = sums[has] / mass[has, None]
    if previous is not None and np.any(~has):
        centers[~has] = previous.centers[~has]
    labels = q.hard_ids()
    sizes = np.bincount(labels.ravel(), minlength=q.n)
    d = fm.n_features
    return SuperpixelMap(labels, centers[:, :d], centers[:, d:], sizes, mass)


def association_matrix(q: SoftAssociation) -> sparse.csr_matrix:
    """Q as an (H*W) x n sparse matrix."""
    h, w = q.height, q.width
    pix = np.broadcast_to(np.arange(h * w).reshape(h, w, 1), q.ids.shape)
    valid = q.valid
    return sparse.csr_matrix((q.probs[valid], (pix[valid], q.ids[valid])), shape=(h * w, q.n))


def centers_matrix_form(fm: PixelFeatureMap, q: SoftAssociation) -> tuple[np.ndarray, np.ndarray]:
    """Centers as Q_hat^T delta with Q_hat the column-normalized association."""
    qm = association_matrix(q)
    colsum = np.asarray(qm.sum(axis=0)).ravel()
    inv = np.divide(1.0, colsum, out=np.zeros_like(colsum), where=colsum > 0)
    q_hat = qm @ sparse.diags(inv)
    out = np.asarray(q_hat.T @ fm.data.reshape(-1, fm.dim))
    d = fm.n_features
    return out[:, :d], out[:, d:]


def reconstruct_pixels(q: SoftAssociation, centers: np.ndarray) -> np.ndarray:
    """Per-pixel sum over candidates of row-normalized q times the candidate center."""
    qt = _slot_major(q.row_normalized())
    out = np.zeros((q.height * q.width, centers.shape[1]))
    for k, ok, c in _gather_slots(_slot_major(q.ids), centers):
        out += np.where(ok, qt[k], 0.0)[:, None] * c
    return out.reshape(q.height, q.width, -1)


# --- association update ------------------------------------------------------


def update_association(fm: PixelFeatureMap, sp: SuperpixelMap, q: SoftAssociation, temperature: float = 1.0) -> SoftAssociation:
    """Softmax over the 9 candidates of -||delta - center||^2 / temperature."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    ids = _slot_major(q.ids)
    flat = fm.data.reshape(-1, fm.dim)
    logits = np.full(ids.shape, -np.inf)
    for k, ok, c in _gather_slots(ids, sp.centers):
        d2 = np.sum((flat - c) ** 2, axis=1)
        logits[k] = np.where(ok, -d2 / temperature, -np.inf)
    top = logits.max(axis=0)
    e = np.exp(logits - top)
    e /= e.sum(axis=0)
    probs = np.ascontiguousarray(e.T).reshape(q.ids.shape)
    return SoftAssociation(probs, q.ids, q.n, q.grid_w, q.grid_h, q.cell_of)


# --- losses -----------------------------------------------------------------


def reconstruction_loss(fm: PixelFeatureMap, q: SoftAssociation, sp: SuperpixelMap, include_positions: bool = False) -> float:
    """Mean squared L2 distance between reconstructed and original pixel features.

    By default only the appearance features are compared; location error is
    the compactness loss's job.
    """
    if include_positions:
        recon = reconstruct_pixels(q, sp.centers)
        target = fm.data
    else:
        recon = reconstruct_pixels(q, sp.centers_u)
        target = fm.features
    return float(np.mean(np.sum((recon - target) ** 2, axis=2)))


def compactness_loss(fm: PixelFeatureMap, q: SoftAssociation, sp: SuperpixelMap) -> float:
    """Sum of ||r_s - y_ij|| over every pixel and valid candidate, over H*W*9."""
    total = 0.0
    y = fm.positions.reshape(-1, 2)
    for _, ok, r in _gather_slots(_slot_major(q.ids), sp.centers_r):
        dist = np.sqrt(np.sum((r - y) ** 2, axis=1))
        total += float(np.sum(dist[ok]))
    return total / (q.height * q.width * N_CANDIDATES)


# --- clustering loop -------------------------------------------------------


def _reseed_empty(fm: PixelFeatureMap, sp: SuperpixelMap) -> SuperpixelMap:
    empty = np.flatnonzero(sp.mass <= 0)
    if empty.size == 0:
        return sp
    largest = int(np.argmax(sp.sizes))
    members = np.flatnonzero(sp.labels.ravel() == largest)
    flat = fm.data.reshape(-1, fm.dim)
    dist = np.sum((flat[members] - sp.centers[largest]) ** 2, axis=1)
    order = members[np.argsort(-dist, kind="stable")]
    centers = sp.centers.copy()
    for k, s in enumerate(empty):
        centers[s] = flat[order[min(k, order.size - 1)]]
    logger.debug("reseeded %d empty superpixels", empty.size)
    d = fm.n_features
    return SuperpixelMap(sp.labels, centers[:, :d], centers[:, d:], sp.sizes, sp.mass)


def cluster(fm: PixelFeatureMap, cfg: ClusterConfig) -> tuple[SoftAssociation, SuperpixelMap, list[tuple[float, float]]]:
    """Alternate center and association updates for ``cfg.iterations`` rounds.

    Round t computes centers from the current association, records
    (loss_rec, loss_compact) for that association, then updates it; entry 0 of
    the trace therefore describes the initial grid. The returned map carries
    argmax labels with empty superpixels dropped and ids compacted.
    """
    q, sp = init_grid(fm, cfg)
    trace: list[tuple[float, float]] = []
    for t in range(cfg.iterations):
        if t > 0:
            sp = compute_centers(fm, q, previous=sp)
        trace.append((reconstruction_loss(fm, q, sp), compactness_loss(fm, q, sp)))
        if t < cfg.iterations - 1:
            sp = _reseed_empty(fm, sp)
        q = update_association(fm, sp, q, cfg.temperature)
    sp = compute_centers(fm, q, previous=sp)
    return q, compact_labels(fm, sp.labels), trace


def hard_centers(fm: PixelFeatureMap, labels: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Plain per-label means of features and locations, plus sizes."""
    flat = labels.ravel()
    sizes = np.bincount(flat, minlength=n)
    data = fm.data.reshape(-1, fm.dim)
    sums = np.empty((n, fm.dim))
    for d in range(fm.dim):
        sums[:, d] = np.bincount(flat, weights=data[:, d], minlength=n)
    centers = sums / np.maximum(sizes, 1)[:, None]
    k = fm.n_features
    return centers[:, :k], centers[:, k:], sizes


def compact_labels(fm: PixelFeatureMap, labels: np.ndarray) -> SuperpixelMap:
    """Drop unused label ids (order preserving) and recompute hard centers."""
    labels = np.asarray(labels, dtype=np.int64)
    used, inverse = np.unique(labels.ravel(), return_inverse=True)
    new = inverse.reshape(labels.shape)
    u, r, sizes = hard_centers(fm, new, used.size)
    return SuperpixelMap(new, u, r, sizes, sizes.astype(np.float64), cell_ids=used)


# --- connectivity -------------------------------------------------------------


def _pixel_components(labels: np.ndarray) -> tuple[int, np.ndarray]:
    h, w = labels.shape
    idx = np.arange(h * w).reshape(h, w)
    same_h = labels[:, 1:] == labels[:, :-1]
    same_v = labels[1:, :] == labels[:-1, :]
    src = np.concatenate([idx[:, :-1][same_h], idx[:-1, :][same_v]])
    dst = np.concatenate([idx[:, 1:][same_h], idx[1:, :][same_v]])
    g = sparse.coo_matrix((np.ones(src.size, dtype=np.int8), (src, dst)), shape=(h * w, h * w))
    n, comp = connected_components(g, directed=False)
    # renumber components by first raster pixel
    first = np.full(n, h * w, dtype=np.int64)
    np.minimum.at(first, comp, np.arange(h * w))
    rank = np.empty(n, dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(n)
    return n, rank[comp].reshape(h, w)


def _component_pairs(comp: np.ndarray) -> np.ndarray:
    a = np.concatenate([comp[:, 1:].ravel(), comp[1:, :].ravel()])
    b = np.concatenate([comp[:, :-1].ravel(), comp[:-1, :].ravel()])
    diff = a != b
    pairs = np.stack([np.minimum(a[diff], b[diff]), np.maximum(a[diff], b[diff])], axis=1)
    if pairs.size == 0:
        return pairs.reshape(0, 2)
    return np.unique(pairs, axis=0)


def enforce_connectivity(sp: SuperpixelMap, fm: PixelFeatureMap) -> SuperpixelMap:
    """Make every label 4-connected.

    Every connected piece smaller than a quarter of the mean superpixel size
    is absorbed into the largest adjacent region, even when it is the only
    piece of its label. Of the remaining pieces, each label keeps its largest
    one and the others become labels of their own. Labels are then
    compacted (original order first) and centers recomputed as hard means.
    """
    labels = np.asarray(sp.labels, dtype=np.int64)
    h, w = labels.shape
    n_labels = np.unique(labels).size
    n_comp, comp = _pixel_components(labels)
    flat_comp = comp.ravel()
    comp_size = np.bincount(flat_comp, minlength=n_comp)
    comp_label = np.empty(n_comp, dtype=np.int64)
    comp_label[flat_comp] = labels.ravel()

    # main piece per label: largest, ties to the earliest in raster order
    order = np.lexsort((np.arange(n_comp), -comp_size, comp_label))
    is_main = np.zeros(n_comp, dtype=bool)
    first_of_label = np.ones(n_comp, dtype=bool)
    first_of_label[1:] = comp_label[order[1:]] != comp_label[order[:-1]]
    is_main[order[first_of_label]] = True

    threshold = 0.25 * (h * w) / n_labels
    parent = np.arange(n_comp)
    group_size = comp_size.astype(np.int64).copy()

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    orphans = np.flatnonzero(comp_size < threshold)
    if orphans.size:
        neigh: dict[int, list[int]] = {}
        for a, b in _component_pairs(comp):
            neigh.setdefault(int(a), []).append(int(b))
            neigh.setdefault(int(b), []).append(int(a))
        for f in orphans:
            f = int(f)
            root_f = find(f)
            best, best_size = -1, -1
            for nb in sorted(neigh.get(f, [])):
                r = find(nb)
                if r == root_f:
                    continue
                if group_size[r] > best_size or (group_size[r] == best_size and r < best):
                    best, best_size = r, int(group_size[r])
            if best < 0:
                continue
            parent[root_f] = best
            group_size[best] += group_size[root_f]

    roots = np.array([find(c) for c in range(n_comp)], dtype=np.int64)
    uniq_roots = np.unique(roots)
    key = np.lexsort((uniq_roots, (~is_main[uniq_roots]).astype(np.int64), comp_label[uniq_roots]))
    new_id = np.empty(n_comp, dtype=np.int64)
    new_id[uniq_roots[key]] = np.arange(uniq_roots.size)
    new_labels = new_id[roots][comp]
    u, r, sizes = hard_centers(fm, new_labels, uniq_roots.size)
    cell_ids = None
    if sp.cell_ids is not None:
        cell_ids = np.asarray(sp.cell_ids)[comp_label[uniq_roots[key]]]
    return SuperpixelMap(new_labels, u, r, sizes, sizes.astype(np.float64), cell_ids)


# --- association re-targeting ---------------------------------------------


def merge_duplicate_candidates(ids: np.ndarray, probs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Fold repeated target ids of a pixel into the first slot that carries it."""
    shape = ids.shape
    ids = _slot_major(ids)
    probs = _slot_major(np.asarray(probs, dtype=np.float64))
    k = ids.shape[0]
    for b in range(1, k):
        for a in range(b):
            m = (ids[b] == ids[a]) & (ids[b] >= 0)
            if np.any(m):
                probs[a] += np.where(m, probs[b], 0.0)
                probs[b] = np.where(m, 0.0, probs[b])
                ids[b] = np.where(m, -1, ids[b])
    return np.ascontiguousarray(ids.T).reshape(shape), np.ascontiguousarray(probs.T).reshape(shape)


def associate_to_labels(q: SoftAssociation, labels: np.ndarray, n_labels: int) -> SoftAssociation:
    """Re-target a grid association onto a final label field.

    Every grid cell maps to the label holding most of the pixels whose argmax
    is that cell (ties to the smaller label). Cells that won no pixel send
    their probability to the pixel's own label. Rows keep summing to one.
    """
    labels = np.asarray(labels, dtype=np.int64)
    hard = q.hard_ids().ravel()
    key = hard * n_labels + labels.ravel()
    pairs, counts = np.unique(key, return_counts=True)
    cell = pairs // n_labels
    lab = pairs % n_labels
    # sort by cell, then count descending, then label ascending; keep first per cell
    order = np.lexsort((lab, -counts, cell))
    first = np.ones(order.size, dtype=bool)
    first[1:] = cell[order[1:]] != cell[order[:-1]]
    cell_to_label = np.full(q.n, -1, dtype=np.int64)
    cell_to_label[cell[order[first]]] = lab[order[first]]

    mapped = np.where(q.ids >= 0, cell_to_label[np.maximum(q.ids, 0)], -1)
    orphan = (q.ids >= 0) & (mapped < 0)
    mapped = np.where(orphan, labels[:, :, None], mapped)
    ids, probs = merge_duplicate_candidates(mapped, np.where(q.ids >= 0, q.probs, 0.0))
    return SoftAssociation(probs, ids, int(n_labels))


# --- serialization ---------------------------------------------------------


def write_label_map(prefix, sp: SuperpixelMap, config: dict | None = None, loss_trace=None) -> tuple[Path, Path]:
    """Write ``<prefix>.pgm`` (16-bit labels) and ``<prefix>.json`` (sidecar)."""
    prefix = Path(prefix)
    pgm = prefix.with_suffix(".pgm")
    side = prefix.with_suffix(".json")
    write_pgm16(pgm, sp.labels)
    doc = {
        "n_superpixels": sp.n_superpixels,
        "centers_u": sp.centers_u.tolist(),
        "centers_r": sp.centers_r.tolist(),
        "sizes": [int(s) for s in sp.sizes],
        "config": config or {},
        "loss_trace": [list(t) for t in (loss_trace or [])],
    }
    side.write_text(json.dumps(doc, indent=1))
    return pgm, side


def read_label_map(prefix) -> tuple[SuperpixelMap, dict]:
    prefix = Path(prefix)
    labels = read_pgm16(prefix.with_suffix(".pgm"))
    doc = json.loads(prefix.with_suffix(".json").read_text())
    sizes = np.asarray(doc["sizes"], dtype=np.int64)
    sp = SuperpixelMap(
        labels,
        np.asarray(doc["centers_u"], dtype=np.float64).reshape(len(sizes), -1),
        np.asarray(doc["centers_r"], dtype=np.float64).reshape(len(sizes), 2),
        sizes,
        sizes.astype(np.float64),
    )
    return sp, doc
