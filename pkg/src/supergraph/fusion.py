"""Three-level tree fusion: leaves (fine regions), branches (coarse regions), one root.

The root input is a linear fusion of the mean branch and mean leaf features.
A child-sum Tree-LSTM then runs bottom-up, leaves first.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .hierarchy import ScaleHierarchy
from .numerics import Rng, finite_diff_grad, rel_error, sigmoid

__all__ = [
    "GATES",
    "LevelTree",
    "FusionWeights",
    "TreeLstmCell",
    "TreeStates",
    "GradcheckReport",
    "build_tree",
    "attach_pixel_context",
    "root_fusion",
    "tree_lstm_up",
    "cell_gradients",
    "cell_gradcheck",
    "write_fusion_json",
]

GATES = ("i", "f", "o", "u")


@dataclass(frozen=True)
class LevelTree:
    root_feat: np.ndarray
    branch_feats: np.ndarray
    leaf_feats: np.ndarray
    leaf_parent: np.ndarray  # branch index of every leaf

    @property
    def n_leaves(self) -> int:
        return self.leaf_feats.shape[0]

    @property
    def n_branches(self) -> int:
        return self.branch_feats.shape[0]

    def edges(self) -> list[tuple[str, int, str, int]]:
        out = [("leaf", i, "branch", int(p)) for i, p in enumerate(self.leaf_parent)]
        out += [("branch", b, "root", 0) for b in range(self.n_branches)]
        return out


def build_tree(hier: ScaleHierarchy, embeddings) -> LevelTree:
    if hier.K != 2:
        raise ValueError(f"fusion needs exactly 2 scales (fine and coarse), got K={hier.K}")
    leaf = np.asarray(embeddings[0], dtype=np.float64)
    branch = np.asarray(embeddings[1], dtype=np.float64)
    if leaf.shape[0] != hier.scales[0].n or branch.shape[0] != hier.scales[1].n:
        raise ValueError("embedding row counts do not match the hierarchy")
    parent = np.asarray(hier.record.parent_maps[0], dtype=np.int64)
    return LevelTree(np.zeros(branch.shape[1]), branch, leaf, parent)


def attach_pixel_context(tree: LevelTree, pixel_mean) -> LevelTree:
    """Concatenate a global pixel feature to the root input; zero-pad the other levels."""
    pixel_mean = np.asarray(pixel_mean, dtype=np.float64).ravel()
    k = pixel_mean.size

    def pad(x):
        return np.concatenate([x, np.zeros((x.shape[0], k))], axis=1)

    return LevelTree(
        np.concatenate([tree.root_feat, pixel_mean]),
        pad(tree.branch_feats),
        pad(tree.leaf_feats),
        tree.leaf_parent,
    )


@dataclass
class FusionWeights:
    w_a: np.ndarray  # root_dim x branch_dim
    w_b: np.ndarray  # root_dim x leaf_dim

    @classmethod
    def init(cls, rng: Rng, root_dim: int, branch_dim: int, leaf_dim: int) -> "FusionWeights":
        return cls(rng.glorot(root_dim, branch_dim), rng.glorot(root_dim, leaf_dim))


def root_fusion(tree: LevelTree, w: FusionWeights) -> np.ndarray:
    if tree.n_branches == 0 or tree.n_leaves == 0:
        raise ValueError("root fusion needs nonempty branch and leaf levels")
    return w.w_a @ tree.branch_feats.mean(axis=0) + w.w_b @ tree.leaf_feats.mean(axis=0)


# --- Tree-LSTM ------------------------------------------------------------


@dataclass
class TreeLstmCell:
    """Child-sum Tree-LSTM parameters, gate-major: ``W[g]`` is hidden x input for gate g in i, f, o, u."""

    W: np.ndarray  # (4, hidden, input)
    U: np.ndarray  # (4, hidden, hidden)
    b: np.ndarray  # (4, hidden)

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.U = np.asarray(self.U, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        h = self.b.shape[1]
        if self.W.shape[:2] != (4, h) or self.U.shape != (4, h, h) or self.b.shape != (4, h):
            raise ValueError("inconsistent gate dimensions")
        for arr in (self.W, self.U, self.b):
            if not np.all(np.isfinite(arr)):
                raise ValueError("cell parameters must be finite")

    @classmethod
    def init(cls, rng: Rng, input_dim: int, hidden: int, scale: float | None = None) -> "TreeLstmCell":
        s = scale if scale is not None else 1.0 / np.sqrt(hidden)
        return cls(
            rng.uniform(-s, s, (4, hidden, input_dim)),
            rng.uniform(-s, s, (4, hidden, hidden)),
            rng.uniform(-s, s, (4, hidden)),
        )

    @classmethod
    def zeros(cls, input_dim: int, hidden: int) -> "TreeLstmCell":
        return cls(np.zeros((4, hidden, input_dim)), np.zeros((4, hidden, hidden)), np.zeros((4, hidden)))

    @property
    def hidden(self) -> int:
        return self.b.shape[1]

    @property
    def input_dim(self) -> int:
        return self.W.shape[2]

    def blocks(self) -> dict[str, np.ndarray]:
        """Named views of every parameter block, e.g. ``W_f`` or ``b_o``."""
        out = {}
        for name, arr in (("W", self.W), ("U", self.U), ("b", self.b)):
            for g, gate in enumerate(GATES):
                out[f"{name}_{gate}"] = arr[g]
        return out


@dataclass
class _Level:
    x: np.ndarray
    hsum: np.ndarray
    i: np.ndarray
    o: np.ndarray
    u: np.ndarray
    c: np.ndarray
    h: np.ndarray
    child_parent: np.ndarray | None = None
    child_h: np.ndarray | None = None
    child_c: np.ndarray | None = None
    f: np.ndarray | None = None


@dataclass
class TreeStates:
    leaf_h: np.ndarray
    leaf_c: np.ndarray
    branch_h: np.ndarray
    branch_c: np.ndarray
    root_h: np.ndarray
    root_c: np.ndarray
    levels: tuple  # internal caches, leaf -> branch -> root


def _level_forward(cell: TreeLstmCell, x, child_parent=None, child_h=None, child_c=None) -> _Level:
    m, hid = x.shape[0], cell.hidden
    hsum = np.zeros((m, hid))
    if child_parent is not None and child_parent.size:
        np.add.at(hsum, child_parent, child_h)
    wx = np.einsum("ghd,md->gmh", cell.W, x)
    i = sigmoid(wx[0] + hsum @ cell.U[0].T + cell.b[0])
    o = sigmoid(wx[2] + hsum @ cell.U[2].T + cell.b[2])
    u = np.tanh(wx[3] + hsum @ cell.U[3].T + cell.b[3])
    c = i * u
    f = None
    if child_parent is not None and child_parent.size:
        f = sigmoid(wx[1][child_parent] + child_h @ cell.U[1].T + cell.b[1])
        np.add.at(c, child_parent, f * child_c)
    h = o * np.tanh(c)
    return _Level(x, hsum, i, o, u, c, h, child_parent, child_h, child_c, f)


def tree_lstm_up(tree: LevelTree, cell: TreeLstmCell) -> TreeStates:
    if tree.leaf_feats.shape[1] != cell.input_dim:
        raise ValueError(f"cell expects {cell.input_dim} inputs, tree features have {tree.leaf_feats.shape[1]}")
    leaves = _level_forward(cell, tree.leaf_feats)
    branches = _level_forward(cell, tree.branch_feats, tree.leaf_parent, leaves.h, leaves.c)
    root_parent = np.zeros(tree.n_branches, dtype=np.int64)
    root = _level_forward(cell, tree.root_feat[None, :], root_parent, branches.h, branches.c)
    return TreeStates(leaves.h, leaves.c, branches.h, branches.c, root.h[0], root.c[0], (leaves, branches, root))


def _level_backward(cell: TreeLstmCell, lv: _Level, dh, dc, grads):
    tc = np.tanh(lv.c)
    do = dh * tc
    dc = dc + dh * lv.o * (1.0 - tc**2)
    di = dc * lv.u
    du = dc * lv.i
    dz = {
        0: di * lv.i * (1.0 - lv.i),
        2: do * lv.o * (1.0 - lv.o),
        3: du * (1.0 - lv.u**2),
    }
    dhsum = np.zeros_like(lv.hsum)
    for g, d in dz.items():
        grads["W"][g] += d.T @ lv.x
        grads["U"][g] += d.T @ lv.hsum
        grads["b"][g] += d.sum(axis=0)
        dhsum += d @ cell.U[g]
    if lv.child_parent is None or lv.child_parent.size == 0:
        return None, None
    p = lv.child_parent
    dcp = dc[p]
    dzf = dcp * lv.child_c * lv.f * (1.0 - lv.f)
    grads["W"][1] += dzf.T @ lv.x[p]
    grads["U"][1] += dzf.T @ lv.child_h
    grads["b"][1] += dzf.sum(axis=0)
    dh_child = dhsum[p] + dzf @ cell.U[1]
    dc_child = dcp * lv.f
    return dh_child, dc_child


def cell_gradients(tree: LevelTree, cell: TreeLstmCell, upstream=None) -> dict[str, np.ndarray]:
    """Gradients of sum(upstream * root_h) for every named parameter block (default upstream: ones)."""
    states = tree_lstm_up(tree, cell)
    up = np.ones(cell.hidden) if upstream is None else np.asarray(upstream, dtype=np.float64)
    grads = {"W": np.zeros_like(cell.W), "U": np.zeros_like(cell.U), "b": np.zeros_like(cell.b)}
    leaves, branches, root = states.levels
    dh_b, dc_b = _level_backward(cell, root, up[None, :], np.zeros((1, cell.hidden)), grads)
    dh_l, dc_l = _level_backward(cell, branches, dh_b, dc_b, grads)
    if dh_l is not None:
        _level_backward(cell, leaves, dh_l, dc_l, grads)
    else:
        _level_backward(cell, leaves, np.zeros_like(leaves.h), np.zeros_like(leaves.c), grads)
    out = {}
    for name in ("W", "U", "b"):
        for g, gate in enumerate(GATES):
            out[f"{name}_{gate}"] = grads[name][g]
    return out


@dataclass
class GradcheckReport:
    errors: dict[str, float]
    tol: float

    @property
    def failed(self) -> list[str]:
        return [k for k, e in self.errors.items() if not e <= self.tol]

    @property
    def ok(self) -> bool:
        return not self.failed

    def __str__(self) -> str:
        lines = [f"{k:6s} rel_err={e:.3e} {'FAIL' if e > self.tol else 'ok'}" for k, e in self.errors.items()]
        return "\n".join(lines)


def cell_gradcheck(cell: TreeLstmCell, tree: LevelTree, upstream=None, eps: float = 1e-5, tol: float = 1e-5, grad_fn=cell_gradients) -> GradcheckReport:
    """Compare analytic block gradients with central differences.

    ``grad_fn`` defaults to :func:`cell_gradients`; pass another callable with
    the same signature to check an alternative backward pass.
    """
    up = np.ones(cell.hidden) if upstream is None else np.asarray(upstream, dtype=np.float64)
    analytic = grad_fn(tree, cell, up)
    errors = {}
    for name in analytic:
        kind, gate = name.split("_")
        g = GATES.index(gate)
        base = getattr(cell, kind)

        def loss(block, kind=kind, g=g, base=base):
            arr = base.copy()
            arr[g] = block
            probe = replace(cell, **{kind: arr})
            return float(up @ tree_lstm_up(tree, probe).root_h)

        numeric = finite_diff_grad(loss, base[g], eps)
        errors[name] = rel_error(analytic[name], numeric)
    return GradcheckReport(errors, tol)


def write_fusion_json(path, states: TreeStates, root_input: np.ndarray) -> None:
    doc = {
        "root": states.root_h.tolist(),
        "root_input": np.asarray(root_input).tolist(),
        "branches": states.branch_h.tolist(),
        "leaves": states.leaf_h.tolist(),
    }
    Path(path).write_text(json.dumps(doc))
