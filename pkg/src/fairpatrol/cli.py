"""Command-line front end: each subcommand runs one phase of the pipeline.

Artefacts live in a single run directory (``--out``, else the config's
``paths.out``, else ``$FAIRPATROL_OUT``, else ``runs/default``). Every command
rewrites ``config.json`` there and records its outputs in ``manifest.json``.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import os
import sys
from datetime import timedelta
from pathlib import Path

import numpy as np

from . import io
from .allocator import AllocationSeries, allocate_all, minority_mask
from .config import RunConfig, apply_overrides, desk_preset
from .graph import HybridGraph, build_graph
from .ingest import IngestError, load_zones, parse_incidents_with_stats, spatial_join, zones_to_geojson
from .metrics import metric_bundle
from .predictor.model import CrimeModel
from .predictor.train import (
    TrainingError,
    TrainingLog,
    evaluate,
    load_checkpoint,
    predict_range,
    save_checkpoint,
    set_deterministic,
    train,
)
from .report import write_report
from .simulator import SimData, load_history, run_simulation
from .tensor import (
    BinningError,
    CountMatrix,
    FeatureTensor,
    SplitIndex,
    bin_counts,
    build_features,
    chrono_split,
    synth_generate,
    synth_incidents,
)

ENV_OUT = "FAIRPATROL_OUT"
DEFAULT_OUT = "runs/default"

log = logging.getLogger("fairpatrol")

# Artefact names inside a run directory.
COUNTS = "counts"
FEATURES = "features"
SPLITS = "splits.json"
INGEST_REPORT = "ingest_report.json"
GRAPH = "graph.json"
CHECKPOINT = "checkpoint"
TRAIN_LOG = "training_log.csv"
ALLOCATION = "allocation"
HISTORY = "history.json"


class MissingArtefact(RuntimeError):
    pass


# --------------------------------------------------------------------------
# Run directory bookkeeping


def resolve(args) -> tuple[RunConfig, Path]:
    env_out = os.environ.get(ENV_OUT) or DEFAULT_OUT
    if args.config:
        cfg = RunConfig.load(args.config)
        out = Path(args.out or cfg.paths.out or env_out)
    else:
        out = Path(args.out or env_out)
        if (out / "config.json").exists():
            cfg = RunConfig.load(out / "config.json")
        elif args.command == "synth":
            cfg = desk_preset()
        else:
            cfg = RunConfig()
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    cfg = apply_overrides(cfg, overrides)
    cfg.paths.out = str(out)
    return cfg, out


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def record(out: Path, cfg: RunConfig, command: str, paths) -> None:
    """Write the resolved config and list ``paths`` in the run manifest."""
    cfg_path = cfg.save(out / "config.json")
    manifest_path = out / "manifest.json"
    manifest = io.read_json(manifest_path) if manifest_path.exists() else {"files": {}}
    manifest["seed"] = cfg.seed
    manifest["mode"] = cfg.mode
    manifest["config_sha256"] = _sha256(cfg_path)
    for p in paths:
        p = Path(p)
        manifest["files"][p.relative_to(out).as_posix()] = {
            "command": command,
            "bytes": p.stat().st_size,
            "sha256": _sha256(p),
        }
    manifest["files"] = dict(sorted(manifest["files"].items()))
    io.write_json(manifest_path, manifest)


def require(*paths) -> None:
    for p in paths:
        if not Path(p).exists():
            raise MissingArtefact(f"missing required artefact: {p}")


def _input_path(value, what: str) -> Path:
    if not value:
        raise MissingArtefact(f"no {what} file configured (set paths.{what})")
    path = Path(value)
    require(path)
    return path


def _zones(cfg: RunConfig):
    return sorted(load_zones(_input_path(cfg.paths.zones, "zones")), key=lambda z: z.zone_id)


def _mask(cfg: RunConfig, zones, zone_order):
    by_id = {z.zone_id: z for z in zones}
    return minority_mask([by_id[z].pct_minority for z in zone_order], cfg.allocation.minority_threshold)


def _load_splits(out: Path) -> SplitIndex:
    d = io.read_json(out / SPLITS)
    return SplitIndex(d["T"], d["n_train"], d["n_val"])


# --------------------------------------------------------------------------
# Commands


def cmd_synth(cfg: RunConfig, out: Path, args) -> str:
    zones, counts = synth_generate(cfg.synth, cfg.seed)
    incidents = synth_incidents(zones, counts, cfg.seed)
    inputs = out / "inputs"
    zpath = io.write_json(inputs / "zones.geojson", zones_to_geojson(zones))
    ipath = io.write_csv(
        inputs / "incidents.csv",
        ["timestamp", "lat", "lon"],
        [(r.timestamp.isoformat(), r.lat, r.lon) for r in incidents],
    )
    tpath = io.write_npy(inputs / "true_counts.npy", counts.values)

    rings = np.concatenate([z.rings[0] for z in zones])
    pad = 1e-4
    lo, hi = rings.min(axis=0) - pad, rings.max(axis=0) + pad
    cfg.mode = "synthetic"
    cfg.paths.incidents = str(ipath.resolve())
    cfg.paths.zones = str(zpath.resolve())
    cfg.bbox = type(cfg.bbox)(float(lo[1]), float(hi[1]), float(lo[0]), float(hi[0]))
    cfg.window.start = counts.t0.isoformat()
    cfg.window.end = (counts.t0 + timedelta(hours=cfg.synth.T)).isoformat()
    record(out, cfg, "synth", [zpath, ipath, tpath])
    n_min = int(sum(z.pct_minority >= cfg.allocation.minority_threshold for z in zones))
    return (
        f"synth: zones={len(zones)} hours={cfg.synth.T} incidents={len(incidents):,} "
        f"minority={n_min}/{len(zones)} seed={cfg.seed}"
    )


def cmd_ingest(cfg: RunConfig, out: Path, args) -> str:
    incidents_path = _input_path(cfg.paths.incidents, "incidents")
    zones = _zones(cfg)
    start, end = cfg.window.bounds()
    records, stats = parse_incidents_with_stats(incidents_path, cfg.bbox, (start, end))
    assignments, report = spatial_join(records, zones)
    counts = bin_counts(assignments, [z.zone_id for z in zones], start, end)
    features = build_features(counts, zones, start)
    N, T = counts.shape
    split = chrono_split(T)

    counts.save(out / COUNTS)
    features.save(out / FEATURES)
    io.write_json(out / SPLITS, {"T": split.T, "n_train": split.n_train, "n_val": split.n_val, "n_test": split.n_test})
    n_min = int(_mask(cfg, zones, counts.zone_order).sum())
    summary = {
        **report.to_dict(),
        "parse": vars(stats),
        "N": N,
        "T": T,
        "F": features.values.shape[2],
        "sparsity": counts.sparsity,
        "minority_zones": n_min,
        "zero_filled": [z.zone_id for z in zones if z.zero_filled],
    }
    io.write_json(out / INGEST_REPORT, summary)
    record(
        out,
        cfg,
        "ingest",
        [out / f"{COUNTS}.npy", out / f"{COUNTS}.json", out / f"{FEATURES}.npy", out / f"{FEATURES}.json", out / SPLITS, out / INGEST_REPORT],
    )
    drop_pct = 100.0 * report.dropped / report.loaded if report.loaded else 0.0
    return (
        f"ingest: loaded {report.loaded:,} | dropped {report.dropped:,} ({drop_pct:.1f}%) | "
        f"assigned {report.assigned:,} | N={N} | T={T:,} | sparsity {100 * counts.sparsity:.2f}% | "
        f"F={features.values.shape[2]} | split {split.n_train:,} / {split.n_val:,} / {split.n_test:,} | "
        f"minority {n_min} / {N}"
    )


def cmd_build_graph(cfg: RunConfig, out: Path, args) -> str:
    zones = _zones(cfg)
    if (out / f"{COUNTS}.json").exists():
        order = io.read_json(out / f"{COUNTS}.json")["zone_order"]
        if order != [z.zone_id for z in zones]:
            raise IngestError("zone file does not match the zone order of the ingested counts")
    g = build_graph(zones, cfg.graph.alpha_geo, cfg.graph.alpha_feat, cfg.graph.theta_sim)
    g.save(out / GRAPH)
    record(out, cfg, "build-graph", [out / GRAPH])
    s = g.stats()
    return (
        f"build-graph: N={g.n} | geo edges {s['geo_edges']} (mean degree {s['geo_mean_degree']:.2f}, "
        f"isolated {s['geo_isolated']}) | feature edges {s['feat_edges']} | "
        f"combined nonzeros {s['combined_nonzeros']} | weights [{s['weight_min']:.4f}, {s['weight_max']:.4f}]"
    )


def _phase_inputs(out: Path):
    require(out / f"{COUNTS}.npy", out / f"{FEATURES}.npy", out / SPLITS, out / GRAPH)
    counts = CountMatrix.load(out / COUNTS)
    features = FeatureTensor.load(out / FEATURES)
    graph = HybridGraph.load(out / GRAPH)
    if graph.zone_order != list(counts.zone_order):
        raise IngestError("graph zone order does not match the ingested counts; rerun build-graph")
    return counts, features, _load_splits(out), graph


def cmd_train(cfg: RunConfig, out: Path, args) -> str:
    counts, features, split, graph = _phase_inputs(out)
    set_deterministic()
    model = CrimeModel(cfg.stgnn, counts.shape[0], cfg.seed)
    model, tlog = train(model, features, counts, split, graph, cfg.train)
    y = counts.values.astype(np.float64)
    test_loss = evaluate(model, features.values, y, graph.a_combined, split.test)
    save_checkpoint(
        out / CHECKPOINT,
        model,
        {
            "train": cfg.to_dict()["train"],
            "best_epoch": tlog.best_epoch,
            "best_val": tlog.best_val,
            "initial_train": tlog.initial_train,
            "test_loss": test_loss,
        },
    )
    tlog.save_csv(out / TRAIN_LOG)
    record(out, cfg, "train", [out / f"{CHECKPOINT}.npz", out / f"{CHECKPOINT}.json", out / TRAIN_LOG])
    return (
        f"train: params {model.n_parameters():,} | epochs {len(tlog.epochs)} | "
        f"initial train NLL {tlog.initial_train:.4f} | best val NLL {tlog.best_val:.4f} at epoch {tlog.best_epoch} | "
        f"test NLL {test_loss:.4f}"
    )


def _checkpoint(out: Path):
    require(out / f"{CHECKPOINT}.npz", out / f"{CHECKPOINT}.json")
    return load_checkpoint(out / CHECKPOINT)


def cmd_allocate(cfg: RunConfig, out: Path, args) -> str:
    counts, features, split, graph = _phase_inputs(out)
    model, _ = _checkpoint(out)
    set_deterministic()
    mask = _mask(cfg, _zones(cfg), counts.zone_order)
    y = counts.values.astype(np.float64)
    mu, _, _ = predict_range(model, features.values, y, graph.a_combined, split.test)
    a = cfg.allocation
    series = allocate_all(mu.T, mask, a.budget, a.epsilon, a.tie_break)
    series.meta["steps"] = [split.test.start, split.test.stop]
    series.save(out / ALLOCATION)
    io.write_npy(out / "risks.npy", mu.T)
    y_test = y[:, split.test.start : split.test.stop]
    m = metric_bundle(series.P, mu.T, y_test, y_test, mask, cfg.sim.coverage_tau, series.optimal_fraction)
    record(out, cfg, "allocate", [out / f"{ALLOCATION}.csv", out / f"{ALLOCATION}.json", out / "risks.npy"])
    return (
        f"allocate: steps {len(series.status):,} | optimal {100 * series.optimal_fraction:.1f}% | "
        f"DIR {m.dir_mean:.4f} +- {m.dir_std:.4f} | Gini {m.gini:.4f} | coverage {m.coverage:.4f}"
    )


def cmd_simulate(cfg: RunConfig, out: Path, args) -> str:
    counts, features, split, graph = _phase_inputs(out)
    model, _ = _checkpoint(out)
    set_deterministic()
    mask = _mask(cfg, _zones(cfg), counts.zone_order)
    if args.fresh:
        for p in [out / HISTORY, *out.glob("sim_state_*.npz")]:
            p.unlink(missing_ok=True)
    data = SimData(features, counts.values, split, mask, graph.a_combined)

    def show(r):
        m = r.metrics
        print(
            f"  cycle {r.cycle}: loss {r.retrain_loss_mean:.4f} | DIR {m.dir_mean:.4f} | Gini {m.gini:.4f} | "
            f"coverage {m.coverage:.4f} | det {m.det_min:.4f} / {m.det_maj:.4f}",
            flush=True,
        )

    history = run_simulation(model, data, cfg.sim, cfg.train, out, callback=show)
    states = sorted(out.glob("sim_state_*.npz"))
    record(out, cfg, "simulate", [out / HISTORY, *states])
    gaps = [r.metrics.det_maj - r.metrics.det_min for r in history]
    return (
        f"simulate: cycles {len(history)} | DIR range [{min(r.metrics.dir_mean for r in history):.4f}, "
        f"{max(r.metrics.dir_mean for r in history):.4f}] | det gap (maj - min) "
        f"{min(gaps):.4f}..{max(gaps):.4f}"
    )


def cmd_report(cfg: RunConfig, out: Path, args) -> str:
    hist_path = Path(args.history) if args.history else out / HISTORY
    require(hist_path)
    history = load_history(hist_path)
    log_path = Path(args.training_log) if args.training_log else out / TRAIN_LOG
    tlog = TrainingLog.load_csv(log_path) if log_path.exists() else None
    test_loss = None
    ckpt = out / f"{CHECKPOINT}.json"
    if args.history is None and ckpt.exists():
        test_loss = io.read_json(ckpt).get("test_loss")
    written = write_report(out, history, tlog, test_loss, cfg.allocation.epsilon)
    record(out, cfg, "report", written)
    return f"report: {len(written) - 1} figure files and metrics_table.md from {len(history)} cycles in {out}"


COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "build-graph": cmd_build_graph,
    "train": cmd_train,
    "allocate": cmd_allocate,
    "simulate": cmd_simulate,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration JSON")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out", help=f"run directory (default ${ENV_OUT} or {DEFAULT_OUT})")
    common.add_argument(
        "--set", action="append", metavar="KEY=VALUE", help="override a config field, e.g. train.epochs=5"
    )
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="fairpatrol", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="generate a synthetic grid city")
    sub.add_parser("ingest", parents=[common], help="parse, join and bin incidents")
    sub.add_parser("build-graph", parents=[common], help="build the hybrid zone graph")
    sub.add_parser("train", parents=[common], help="fit the risk model")
    sub.add_parser("allocate", parents=[common], help="allocate patrols over the test window")
    p = sub.add_parser("simulate", parents=[common], help="run the deployment feedback loop")
    p.add_argument("--fresh", action="store_true", help="discard saved cycles instead of resuming")
    p = sub.add_parser("report", parents=[common], help="write figure data and the metrics table")
    p.add_argument("--history", help="history file (default: <out>/history.json)")
    p.add_argument("--training-log", help="training log CSV (default: <out>/training_log.csv)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg, out = resolve(args)
        out.mkdir(parents=True, exist_ok=True)
        print(COMMANDS[args.command](cfg, out, args), flush=True)
    except MissingArtefact as exc:
        print(f"fairpatrol {args.command}: {exc}", file=sys.stderr)
        return 2
    except (IngestError, BinningError, TrainingError, ValueError, TypeError, OSError) as exc:
        print(f"fairpatrol {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
