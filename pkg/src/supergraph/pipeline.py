"""End-to-end stages: segment -> hierarchy -> embed -> fuse, plus output writers."""

from __future__ import annotations

import csv
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .cdgc import MdgcnStack, stack_forward, write_embeddings_csv, write_weights
from .fusion import (
    FusionWeights,
    LevelTree,
    TreeLstmCell,
    TreeStates,
    attach_pixel_context,
    build_tree,
    root_fusion,
    tree_lstm_up,
    write_fusion_json,
)
from .hierarchy import MergeRecord, ScaleHierarchy, boruvka_merge, build_rag, write_hierarchy
from .imageio import (
    Image,
    PixelFeatureMap,
    default_pos_scale,
    filter_bank_features,
    load_ppm,
    render_labels,
    resize_nearest,
    to_gray_features,
    to_lab,
    write_ppm,
)
from .numerics import Rng
from .superpixel import (
    ClusterConfig,
    SoftAssociation,
    SuperpixelMap,
    associate_to_labels,
    cluster,
    enforce_connectivity,
    write_label_map,
)

logger = logging.getLogger(__name__)

__all__ = [
    "PipelineConfig",
    "ConfigError",
    "Segmentation",
    "Embedding",
    "run_segment",
    "run_hierarchy",
    "run_embed",
    "save_segment",
    "save_hierarchy",
    "save_embed",
    "check_outputs",
    "threads_from_env",
]


class ConfigError(ValueError):
    """Invalid configuration value."""


@dataclass
class PipelineConfig:
    input: str | None = None
    grid: tuple[int, int] = (16, 16)  # (grid_w, grid_h)
    iterations: int = 10
    pos_scale: float | None = None
    compactness: float = 10.0
    temperature: float = 1.0
    lambda_compact: float = 0.1
    targets: list[int] = field(default_factory=lambda: [64])
    alpha: float = 0.4
    gamma: int = 2
    gcn_hidden: int = 16
    embed_dim: int = 16
    hidden: int = 64
    tied: bool = True
    z_mode: str = "none"
    features: str = "lab"
    root_pixel_mean: bool = False
    resize: tuple[int, int] | None = None  # (width, height)
    seed: int = 0
    out: str = "out"

    def validate(self) -> "PipelineConfig":
        gw, gh = self.grid
        if gw < 1 or gh < 1:
            raise ConfigError("grid dimensions must be >= 1")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")
        if self.lambda_compact < 0:
            raise ConfigError("lambda_compact must be non-negative")
        if any(t < 1 for t in self.targets):
            raise ConfigError("targets must be >= 1")
        if any(b >= a for a, b in zip(self.targets, self.targets[1:])):
            raise ConfigError(f"targets must be strictly decreasing, got {self.targets}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        if self.gamma < 1:
            raise ConfigError("gamma must be >= 1")
        for name in ("gcn_hidden", "embed_dim", "hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.z_mode not in ("none", "subset"):
            raise ConfigError("z_mode must be 'none' or 'subset'")
        if self.features not in ("lab", "filter_bank"):
            raise ConfigError("features must be 'lab' or 'filter_bank'")
        if self.pos_scale is not None and self.pos_scale <= 0:
            raise ConfigError("pos_scale must be positive")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = list(self.grid)
        d["resize"] = list(self.resize) if self.resize else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if "grid" in d and d["grid"] is not None:
            d["grid"] = tuple(int(v) for v in d["grid"])
        if d.get("resize") is not None:
            d["resize"] = tuple(int(v) for v in d["resize"])
        if "targets" in d:
            d["targets"] = [int(t) for t in d["targets"]]
        return cls(**d)

    def cluster_config(self, height: int, width: int) -> ClusterConfig:
        gw, gh = self.grid
        pos = self.pos_scale
        if pos is None:
            pos = default_pos_scale(height, width, gw * gh, self.compactness)
        return ClusterConfig(gw, gh, self.iterations, pos, self.temperature, self.lambda_compact, self.seed)


def threads_from_env() -> int:
    raw = os.environ.get("SUPERGRAPH_THREADS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


@dataclass
class Segmentation:
    image: Image
    fm: PixelFeatureMap
    q: SoftAssociation  # grid-level association
    raw: SuperpixelMap  # argmax labels straight from clustering
    sp: SuperpixelMap  # connected, compacted labels
    q_nodes: SoftAssociation  # association re-targeted onto sp labels
    trace: list[tuple[float, float]]
    cluster_cfg: ClusterConfig
    timings: dict = field(default_factory=dict)


@dataclass
class Embedding:
    embeddings: list[np.ndarray]
    stack: MdgcnStack
    tree: LevelTree | None
    states: TreeStates | None
    fusion_error: str | None = None


def _features(img: Image, kind: str, pos_scale: float) -> PixelFeatureMap:
    if kind == "filter_bank":
        return filter_bank_features(img, pos_scale=pos_scale)
    if img.channels == 3:
        return to_lab(img, pos_scale)
    return to_gray_features(img, pos_scale)


def run_segment(cfg: PipelineConfig, image: Image | None = None) -> Segmentation:
    cfg.validate()
    if image is None:
        if cfg.input is None:
            raise ConfigError("no input image given")
        image = load_ppm(cfg.input)
    if cfg.resize:
        image = resize_nearest(image, *cfg.resize)
    ccfg = cfg.cluster_config(image.height, image.width)
    try:
        ccfg.validate(image.height, image.width)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    timings = {}
    t0 = time.perf_counter()
    fm = _features(image, cfg.features, ccfg.pos_scale)
    timings["features"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    q, raw, trace = cluster(fm, ccfg)
    timings["cluster"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    sp = enforce_connectivity(raw, fm)
    q_nodes = associate_to_labels(q, sp.labels, sp.n_superpixels)
    timings["connectivity"] = time.perf_counter() - t0
    return Segmentation(image, fm, q, raw, sp, q_nodes, trace, ccfg, timings)


def run_hierarchy(cfg: PipelineConfig, seg: Segmentation) -> ScaleHierarchy:
    g = build_rag(seg.sp)
    if cfg.targets and cfg.targets[0] >= g.n:
        raise ConfigError(f"first target {cfg.targets[0]} must be below the {g.n} fine regions")
    if not cfg.targets:
        return ScaleHierarchy([g], MergeRecord())
    return boruvka_merge(g, cfg.targets)


def run_embed(cfg: PipelineConfig, seg: Segmentation, hier: ScaleHierarchy, threads: int = 1) -> Embedding:
    stack = MdgcnStack.init(
        cfg.seed,
        seg.fm.n_features,
        cfg.gcn_hidden,
        cfg.embed_dim,
        hier.K,
        cfg.gamma,
        cfg.alpha,
        cfg.tied,
        cfg.z_mode,
    )
    embeddings = stack_forward(hier, seg.fm, seg.q_nodes, stack, threads)
    if hier.K != 2:
        return Embedding(embeddings, stack, None, None, f"fusion needs exactly 2 scales, hierarchy has K={hier.K}")
    rng = Rng(cfg.seed + 1)
    tree = build_tree(hier, embeddings)
    fw = FusionWeights.init(rng, cfg.embed_dim, cfg.embed_dim, cfg.embed_dim)
    tree = replace(tree, root_feat=root_fusion(tree, fw))
    if cfg.root_pixel_mean:
        tree = attach_pixel_context(tree, seg.fm.data.reshape(-1, seg.fm.dim).mean(axis=0))
    cell = TreeLstmCell.init(rng, tree.leaf_feats.shape[1], cfg.hidden)
    return Embedding(embeddings, stack, tree, tree_lstm_up(tree, cell))


# --- writers ------------------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def save_segment(out: Path, cfg: PipelineConfig, seg: Segmentation) -> None:
    out.mkdir(parents=True, exist_ok=True)
    params = {k: v for k, v in cfg.to_dict().items() if k != "out"}
    write_label_map(out / "labels", seg.sp, params, seg.trace)
    with open(out / "losses.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["iter", "loss_rec", "loss_compact", "loss_total"])
        for t, (rec, comp) in enumerate(seg.trace):
            wr.writerow([t, _fmt(rec), _fmt(comp), _fmt(rec + cfg.lambda_compact * comp)])
    write_ppm(out / "segments.ppm", render_labels(seg.sp.labels, cfg.seed))


def save_hierarchy(out: Path, cfg: PipelineConfig, seg: Segmentation, hier: ScaleHierarchy) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_hierarchy(out / "hierarchy.json", hier)
    for k in range(hier.K):
        labels = hier.fine_to_scale(k)[seg.sp.labels]
        write_ppm(out / f"scale_{k}.ppm", render_labels(labels, cfg.seed))


def save_embed(out: Path, cfg: PipelineConfig, emb: Embedding) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_embeddings_csv(out / "embeddings.csv", emb.embeddings)
    write_weights(out / "weights.bin", emb.stack)
    if emb.states is not None:
        write_fusion_json(out / "fusion.json", emb.states, emb.tree.root_feat)


def check_outputs(out: Path) -> list[str]:
    """Validate whichever documented artifacts exist in ``out``; return problems found."""
    problems: list[str] = []
    side = out / "labels.json"
    if side.exists():
        doc = json.loads(side.read_text())
        for key in ("n_superpixels", "centers_u", "centers_r", "sizes", "config", "loss_trace"):
            if key not in doc:
                problems.append(f"labels.json: missing {key}")
        if "sizes" in doc and len(doc["sizes"]) != doc.get("n_superpixels"):
            problems.append("labels.json: sizes length != n_superpixels")
    losses = out / "losses.csv"
    if losses.exists():
        header = losses.read_text().splitlines()[0]
        if not header.startswith("iter,loss_rec,loss_compact"):
            problems.append("losses.csv: bad header")
    hj = out / "hierarchy.json"
    if hj.exists():
        doc = json.loads(hj.read_text())
        for s in doc.get("scales", []):
            if set(s) != {"n", "nodes", "edges"} or len(s["nodes"]) != s["n"]:
                problems.append("hierarchy.json: malformed scale entry")
                break
            for nd in s["nodes"][:1]:
                if set(nd) != {"id", "feat", "centroid", "size"}:
                    problems.append("hierarchy.json: malformed node entry")
        if "steps" not in doc:
            problems.append("hierarchy.json: missing steps")
    emb = out / "embeddings.csv"
    if emb.exists():
        if not emb.read_text().startswith("node,scale"):
            problems.append("embeddings.csv: bad header")
    fj = out / "fusion.json"
    if fj.exists():
        doc = json.loads(fj.read_text())
        for key in ("root", "branches", "leaves"):
            if key not in doc:
                problems.append(f"fusion.json: missing {key}")
    return problems
