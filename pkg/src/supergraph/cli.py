"""Command-line driver: ``supergraph {segment,hierarchy,embed,pipeline,verify,bench}``.

Exit codes: 0 success, 1 verification failure, 2 usage or config error,
3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .hierarchy import DisconnectedGraphError, build_rag
from .imageio import PpmError, load_ppm
from .pipeline import (
    ConfigError,
    PipelineConfig,
    check_outputs,
    run_embed,
    run_hierarchy,
    run_segment,
    save_embed,
    save_hierarchy,
    save_segment,
    threads_from_env,
)

logger = logging.getLogger("supergraph")

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def parse_dims(text: str) -> tuple[int, int]:
    """'16x12' -> (16, 12), width first."""
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}") from None


def parse_targets(text: str) -> list[int]:
    text = text.strip()
    if not text:
        return []
    try:
        return [int(t) for t in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


# flag dest -> config field, for everything that maps one-to-one
_CONFIG_FLAGS = (
    "grid", "iterations", "pos_scale", "compactness", "temperature", "lambda_compact",
    "targets", "alpha", "gamma", "gcn_hidden", "embed_dim", "hidden", "z_mode",
    "features", "resize", "seed", "out",
)


def _add_config_args(p: argparse.ArgumentParser) -> None:
    S = argparse.SUPPRESS
    p.add_argument("input", nargs="?", default=S, help="input PPM/PGM image")
    p.add_argument("--config", type=Path, help="JSON config; explicit flags override it")
    p.add_argument("--out", default=S, help="output directory (default: out)")
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--grid", type=parse_dims, default=S, help="superpixel grid as WxH (default 16x16)")
    p.add_argument("--iterations", type=int, default=S)
    p.add_argument("--pos-scale", type=float, default=S, help="location weight (default: compactness / grid step)")
    p.add_argument("--compactness", type=float, default=S)
    p.add_argument("--temperature", type=float, default=S)
    p.add_argument("--lambda-compact", type=float, default=S)
    p.add_argument("--features", choices=("lab", "filter_bank"), default=S)
    p.add_argument("--resize", type=parse_dims, default=S, help="resize input to WxH first")
    p.add_argument("--targets", type=parse_targets, default=S, help="coarse region counts, e.g. 64 or 256,64")
    p.add_argument("--alpha", type=float, default=S)
    p.add_argument("--gamma", type=int, default=S, help="graph conv layers per scale")
    p.add_argument("--gcn-hidden", type=int, default=S)
    p.add_argument("--embed-dim", type=int, default=S)
    p.add_argument("--hidden", type=int, default=S, help="Tree-LSTM hidden size")
    p.add_argument("--z-mode", choices=("none", "subset"), default=S)
    p.add_argument("--untied", action="store_true", help="separate weights per neighbour subset")
    p.add_argument("--root-pixel-mean", action="store_true", help="append the mean pixel feature to the root input")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="supergraph", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (
        ("segment", "soft superpixel segmentation"),
        ("hierarchy", "segment, then merge regions into coarser scales"),
        ("embed", "segment, merge, embed every scale and fuse"),
        ("pipeline", "all stages plus config.json and timings.csv"),
    ):
        _add_config_args(sub.add_parser(name, help=help_text))

    pv = sub.add_parser("verify", help="run the property suites")
    pv.add_argument("--inject-fault", action="append", default=[], metavar="NAME", help="test hook, e.g. alpha_sign_flip")

    pb = sub.add_parser("bench", help="node/edge/time/byte counts per stage")
    _add_config_args(pb)
    pb.add_argument("--grids", type=lambda t: [parse_dims(x) for x in t.split(",")], default=[(128, 128), (64, 64)],
                    help="grid per scale, finest first (default 128x128,64x64)")
    return parser


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    d: dict = {}
    if args.config is not None:
        try:
            d = json.loads(args.config.read_text())
        except FileNotFoundError:
            raise CliError(f"config file not found: {args.config}", EXIT_CONFIG) from None
        except json.JSONDecodeError as exc:
            raise CliError(f"{args.config}: invalid JSON ({exc})", EXIT_CONFIG) from None
        if not isinstance(d, dict):
            raise CliError(f"{args.config}: expected a JSON object", EXIT_CONFIG)
    given = vars(args)
    if "input" in given:
        d["input"] = given["input"]
    for key in _CONFIG_FLAGS:
        if key in given:
            d[key] = given[key]
    if args.untied:
        d["tied"] = False
    if args.root_pixel_mean:
        d["root_pixel_mean"] = True
    try:
        cfg = PipelineConfig.from_dict(d).validate()
    except (TypeError, ConfigError) as exc:
        raise CliError(f"config error: {exc}", EXIT_CONFIG) from None
    if cfg.input is None:
        raise CliError("no input image given", EXIT_CONFIG)
    return cfg


def _load(cfg: PipelineConfig):
    path = Path(cfg.input)
    if not path.exists():
        raise CliError(f"input file not found: {path}", EXIT_CONFIG)
    try:
        return load_ppm(path)
    except PpmError as exc:
        raise CliError(f"{path}: {exc}", EXIT_IO) from None
    except OSError as exc:
        raise CliError(f"{path}: {exc}", EXIT_IO) from None


def _stages(cfg: PipelineConfig, upto: str, timings: dict):
    img = _load(cfg)
    t0 = time.perf_counter()
    seg = run_segment(cfg, img)
    timings["segment"] = time.perf_counter() - t0
    logger.info("segment: %d superpixels", seg.sp.n_superpixels)
    if upto == "segment":
        return seg, None, None
    t0 = time.perf_counter()
    try:
        hier = run_hierarchy(cfg, seg)
    except DisconnectedGraphError as exc:
        raise CliError(f"hierarchy: {exc}", EXIT_CONFIG) from None
    timings["hierarchy"] = time.perf_counter() - t0
    logger.info("hierarchy: scales %s", [g.n for g in hier.scales])
    if upto == "hierarchy":
        return seg, hier, None
    t0 = time.perf_counter()
    emb = run_embed(cfg, seg, hier, threads_from_env())
    timings["embed"] = time.perf_counter() - t0
    return seg, hier, emb


def _check(out: Path) -> None:
    problems = check_outputs(out)
    if problems:
        raise CliError("output self-check failed: " + "; ".join(problems), EXIT_VERIFY)


def cmd_run(args) -> int:
    cfg = resolve_config(args)
    out = Path(cfg.out)
    timings: dict = {}
    upto = "embed" if args.command == "pipeline" else args.command
    seg, hier, emb = _stages(cfg, upto, timings)
    try:
        save_segment(out, cfg, seg)
        if hier is not None:
            save_hierarchy(out, cfg, seg, hier)
        if emb is not None:
            save_embed(out, cfg, emb)
        if args.command == "pipeline":
            (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
            with open(out / "timings.csv", "w", newline="") as fh:
                wr = csv.writer(fh)
                wr.writerow(["stage", "millis"])
                for stage, sec in timings.items():
                    wr.writerow([stage, f"{sec * 1000:.3f}"])
    except OSError as exc:
        raise CliError(f"cannot write outputs to {out}: {exc}", EXIT_IO) from None
    _check(out)
    if emb is not None and emb.fusion_error:
        raise CliError(f"embeddings written; fusion refused: {emb.fusion_error}", EXIT_CONFIG)
    if emb is not None:
        print(f"root vector ({emb.states.root_h.size} dims) written to {out / 'fusion.json'}")
    print(f"wrote outputs to {out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import FAULTS, format_report, run_suites

    bad = [f for f in args.inject_fault if f not in FAULTS]
    if bad:
        raise CliError(f"unknown fault {bad[0]!r}; choose from {', '.join(FAULTS)}", EXIT_CONFIG)
    results = run_suites(args.inject_fault)
    print(format_report(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY


def _grid_edges(h: int, w: int) -> int:
    return h * (w - 1) + w * (h - 1)


def _label_edges(labels: np.ndarray) -> int:
    a = np.concatenate([labels[:, 1:].ravel(), labels[1:, :].ravel()])
    b = np.concatenate([labels[:, :-1].ravel(), labels[:-1, :].ravel()])
    d = a != b
    pairs = np.stack([np.minimum(a[d], b[d]), np.maximum(a[d], b[d])], axis=1)
    return int(np.unique(pairs, axis=0).shape[0]) if pairs.size else 0


def cmd_bench(args) -> int:
    from dataclasses import replace

    cfg = resolve_config(args)
    img = _load(cfg)
    out = Path(cfg.out)
    rows = []
    for k, grid in enumerate(args.grids):
        gcfg = replace(cfg, grid=grid, targets=[])
        t0 = time.perf_counter()
        seg = run_segment(gcfg, img)
        total = time.perf_counter() - t0
        fm = seg.fm
        if k == 0:
            n_pix = fm.height * fm.width
            e = _grid_edges(fm.height, fm.width)
            rows.append(["pixels", n_pix, e, seg.timings["features"] * 1000, fm.data.nbytes + 16 * e])
        name = "superpixels" if k == 0 else f"scale_{k}"
        # graph nodes are the association targets, one per grid cell
        n_nodes = grid[0] * grid[1]
        e = _label_edges(seg.raw.labels)
        rows.append([name, n_nodes, e, seg.timings["cluster"] * 1000, n_nodes * fm.dim * 8 + 16 * e])
        g = build_rag(seg.sp)
        rows.append([f"{name}_regions", g.n, g.adj.nnz // 2, seg.timings["connectivity"] * 1000, g.n * fm.dim * 8 + 8 * g.adj.nnz])
        if k == 0 and cfg.targets:
            t0 = time.perf_counter()
            try:
                hier = run_hierarchy(cfg, seg)
            except DisconnectedGraphError as exc:
                raise CliError(f"hierarchy: {exc}", EXIT_CONFIG) from None
            ms = (time.perf_counter() - t0) * 1000
            for j, gs in enumerate(hier.scales[1:], start=1):
                rows.append([f"merged_{j}", gs.n, gs.adj.nnz // 2, ms, gs.n * fm.dim * 8 + 8 * gs.adj.nnz])
        logger.info("grid %dx%d done in %.1fs", grid[0], grid[1], total)
    try:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "bench.csv", "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["stage", "nodes", "edges", "millis", "bytes"])
            for stage, nodes, edges, ms, nbytes in rows:
                wr.writerow([stage, nodes, edges, f"{ms:.3f}", int(nbytes)])
    except OSError as exc:
        raise CliError(f"cannot write {out / 'bench.csv'}: {exc}", EXIT_IO) from None
    n_pix = rows[0][1]
    for stage, nodes, *_ in rows[1:]:
        print(f"{stage:>22s}: {nodes:>8d} nodes  reduction {n_pix / nodes:.1f}x from {n_pix} pixels")
    print(f"wrote {out / 'bench.csv'}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    handlers = {"verify": cmd_verify, "bench": cmd_bench}
    try:
        return handlers.get(args.command, cmd_run)(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
