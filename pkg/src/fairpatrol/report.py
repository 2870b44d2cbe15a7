"""Figure-data series and the per-cycle metrics table.

Each figure gets one CSV so any plotting tool can redraw it. The metrics
table sets this run beside the published Baltimore reference run; those
reference numbers are orientation only and never a pass/fail target.
"""

from __future__ import annotations

from pathlib import Path

from . import io
from .allocator import EPSILON

# Published Baltimore 2017-2019 reference run, per deployment cycle.
REFERENCE_CYCLES = [
    # cycle, loss, dir_mean, dir_std, gini, coverage, det_min, det_maj
    (1, 0.2173, 1.0068, 0.0495, 0.9249, 0.9359, 0.3391, 0.3785),
    (2, 0.2155, 0.9935, 0.0496, 0.9246, 0.8763, 0.3411, 0.3783),
    (3, 0.2198, 0.9928, 0.0495, 0.9246, 0.8858, 0.3422, 0.3791),
    (4, 0.2158, 1.0262, 0.0426, 0.9253, 0.8827, 0.3429, 0.3777),
    (5, 0.2157, 1.0189, 0.0463, 0.9251, 0.9010, 0.3428, 0.3780),
    (6, 0.2154, 1.0187, 0.0464, 0.9251, 0.9016, 0.3429, 0.3780),
]
REFERENCE_TRAINING = {"best_val": 0.4800, "best_epoch": 91, "test": 0.4857}

FIGURES = (
    "loss_curve",
    "loss_gap",
    "dir_band",
    "patrol_means",
    "coverage_gini",
    "detection_rates",
    "retrain_loss",
)


def _r(x) -> str:
    return f"{float(x):.6f}"


def figure_series(history, training_log=None, epsilon: float = EPSILON) -> dict:
    """Map figure name to ``(header, rows)``. Loss figures need ``training_log``."""
    out = {}
    if training_log is not None and training_log.epochs:
        rows = [(e, _r(tr), _r(va)) for e, tr, va in training_log.rows()]
        out["loss_curve"] = (["epoch", "train_loss", "val_loss"], rows)
        out["loss_gap"] = (
            ["epoch", "gap"],
            [(e, _r(va - tr)) for e, tr, va in training_log.rows()],
        )
    m = [(r.cycle, r.metrics) for r in history]
    out["dir_band"] = (
        ["cycle", "dir_mean", "dir_std", "band_low", "band_high"],
        [(c, _r(x.dir_mean), _r(x.dir_std), _r(1 - epsilon), _r(1 + epsilon)) for c, x in m],
    )
    out["patrol_means"] = (
        ["cycle", "patrol_min_mean", "patrol_maj_mean"],
        [(c, _r(x.patrol_min_mean), _r(x.patrol_maj_mean)) for c, x in m],
    )
    out["coverage_gini"] = (
        ["cycle", "coverage", "gini"],
        [(c, _r(x.coverage), _r(x.gini)) for c, x in m],
    )
    out["detection_rates"] = (
        ["cycle", "det_min", "det_maj"],
        [(c, _r(x.det_min), _r(x.det_maj)) for c, x in m],
    )
    out["retrain_loss"] = (
        ["cycle", "loss_mean", "loss_final"],
        [(r.cycle, _r(r.retrain_loss_mean), _r(r.retrain_loss_final)) for r in history],
    )
    return out


def metrics_table(history, training_log=None, test_loss=None) -> str:
    """Markdown table of this run next to the reference values."""
    ref = {row[0]: row for row in REFERENCE_CYCLES}
    lines = [
        "# Deployment cycles",
        "",
        "Reference values come from the published Baltimore run and are for",
        "orientation only.",
        "",
        "| cycle | loss | ref loss | DIR mean +- std | ref DIR | Gini | ref Gini "
        "| coverage | ref cov. | det_min / det_maj | ref det |",
        "|---|---|---|---|---|---|---|---|---|---|---|",
    ]
    for r in history:
        x = r.metrics
        rr = ref.get(r.cycle)
        if rr:
            rl, rdir, rg, rc, rdet = (
                f"{rr[1]:.4f}",
                f"{rr[2]:.4f} +- {rr[3]:.4f}",
                f"{rr[4]:.4f}",
                f"{rr[5]:.4f}",
                f"{rr[6]:.4f} / {rr[7]:.4f}",
            )
        else:
            rl = rdir = rg = rc = rdet = "-"
        lines.append(
            f"| {r.cycle} | {r.retrain_loss_mean:.4f} | {rl} "
            f"| {x.dir_mean:.4f} +- {x.dir_std:.4f} | {rdir} "
            f"| {x.gini:.4f} | {rg} | {x.coverage:.4f} | {rc} "
            f"| {x.det_min:.4f} / {x.det_maj:.4f} | {rdet} |"
        )
    lines += ["", "# Training", ""]
    lines.append("| quantity | this run | reference |")
    lines.append("|---|---|---|")
    best_val = training_log.best_val if training_log is not None else None
    best_epoch = training_log.best_epoch if training_log is not None else None
    lines.append(
        f"| best validation NLL | {_opt(best_val)} | {REFERENCE_TRAINING['best_val']:.4f} |"
    )
    lines.append(f"| best epoch | {best_epoch if best_epoch is not None else '-'} | {REFERENCE_TRAINING['best_epoch']} |")
    lines.append(f"| test NLL | {_opt(test_loss)} | {REFERENCE_TRAINING['test']:.4f} |")
    lines.append("")
    lines.append("Coverage counts a zone as patrolled at >= "
                 f"{history[0].metrics.coverage_tau if history else 0.5} units.")
    lines.append("")
    return "\n".join(lines)


def _opt(v) -> str:
    return "-" if v is None else f"{v:.4f}"


def write_report(out_dir, history, training_log=None, test_loss=None, epsilon: float = EPSILON) -> list:
    """Write ``figures/*.csv`` and ``metrics_table.md``; returns the paths."""
    out_dir = Path(out_dir)
    written = []
    for name, (header, rows) in figure_series(history, training_log, epsilon).items():
        written.append(io.write_csv(out_dir / "figures" / f"{name}.csv", header, rows))
    written.append(io.atomic_write_text(out_dir / "metrics_table.md", metrics_table(history, training_log, test_loss)))
    return written
