"""Closed-loop deployment simulation: infer, allocate, observe, retrain."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .allocator import BUDGET, EPSILON, allocate_all
from .metrics import COVERAGE_TAU, MetricBundle, metric_bundle
from .predictor.model import CrimeModel, load_arrays, state_arrays
from .predictor.train import TrainConfig, TrainingError, fit, predict_range
from .tensor import FeatureTensor, SplitIndex, set_patrol_exposure, with_series

log = logging.getLogger(__name__)


@dataclass
class DetectionModel:
    p_base: float = 0.30
    p_max: float = 0.90
    budget: float = BUDGET

    def __post_init__(self):
        if not 0 <= self.p_base <= self.p_max <= 1:
            raise ValueError("need 0 <= p_base <= p_max <= 1")


@dataclass
class SimConfig:
    cycles: int = 6
    retrain_epochs: int = 50
    retrain_window: int = 64
    retrain_stride: int = 1
    detection: DetectionModel = field(default_factory=DetectionModel)
    epsilon: float = EPSILON
    coverage_tau: float = COVERAGE_TAU

    def __post_init__(self):
        if isinstance(self.detection, dict):
            self.detection = DetectionModel(**self.detection)
        for name in ("cycles", "retrain_epochs", "retrain_window", "retrain_stride"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class CycleRecord:
    cycle: int
    retrain_loss_mean: float
    retrain_loss_final: float
    metrics: MetricBundle
    status_counts: dict
    retrain_losses: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["metrics"] = self.metrics.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CycleRecord":
        d = dict(d)
        d["metrics"] = MetricBundle(**d["metrics"])
        return cls(**d)


@dataclass
class SimData:
    """Everything a cycle reads: features, true counts (N, T), split, mask."""

    features: FeatureTensor
    counts: np.ndarray
    splits: SplitIndex
    mask: np.ndarray
    adj: np.ndarray


def detection_probability(P, model: DetectionModel = DetectionModel()) -> np.ndarray:
    P = np.asarray(P, dtype=np.float64)
    return model.p_base + (model.p_max - model.p_base) * np.clip(P / model.budget, 0.0, 1.0)


def observe(y_true, D) -> np.ndarray:
    """Expected detected counts: ``y_true`` (N, T) times ``D`` (T, N) transposed."""
    y_true = np.asarray(y_true, dtype=np.float64)
    D = np.asarray(D, dtype=np.float64)
    if D.shape != y_true.shape[::-1]:
        raise ValueError(f"detection shape {D.shape} does not match counts {y_true.shape}")
    return y_true * D.T


def run_cycle(model: CrimeModel, data: SimData, cfg: SimConfig, train_cfg: TrainConfig, cycle_idx: int, stream):
    """One deployment cycle.

    ``stream`` is the (N, T) count series the model sees: true counts before
    the first cycle, the previous cycle's observations in the test window
    afterwards. Returns ``(model, record, next_stream, artefacts)``.
    """
    test = data.splits.test
    y_true = data.counts[:, test.start : test.stop]
    feats = with_series(data.features, stream)

    mu, _, _ = predict_range(model, feats.values, stream, data.adj, test)
    risks = mu.T
    alloc = allocate_all(risks, data.mask, cfg.detection.budget, cfg.epsilon)
    D = detection_probability(alloc.P, cfg.detection)
    y_obs = observe(y_true, D)

    metrics = metric_bundle(
        alloc.P, risks, y_true, y_obs, data.mask, cfg.coverage_tau, alloc.optimal_fraction
    )

    next_stream = np.array(stream, dtype=np.float64, copy=True)
    next_stream[:, test.start : test.stop] = y_obs
    set_patrol_exposure(data.features, alloc.P, cfg.detection.budget, test)
    retrain_feats = with_series(data.features, next_stream)

    rcfg = TrainConfig(
        epochs=cfg.retrain_epochs,
        batch=train_cfg.batch,
        window=cfg.retrain_window,
        lr=train_cfg.lr,
        weight_decay=train_cfg.weight_decay,
        grad_clip=train_cfg.grad_clip,
        seed=train_cfg.seed + cycle_idx,
        stride=cfg.retrain_stride,
    )
    try:
        rlog = fit(model, retrain_feats.values, next_stream, data.adj, test, rcfg, tag=f"cycle {cycle_idx}")
    except TrainingError as exc:
        raise TrainingError(f"cycle {cycle_idx}: {exc}") from exc

    record = CycleRecord(
        cycle=cycle_idx,
        retrain_loss_mean=float(np.mean(rlog.train_loss)),
        retrain_loss_final=float(rlog.train_loss[-1]),
        metrics=metrics,
        status_counts=alloc.status_counts,
        retrain_losses=[float(v) for v in rlog.train_loss],
    )
    artefacts = {"P": alloc.P, "risks": risks, "y_obs": y_obs, "D": D}
    return model, record, next_stream, artefacts


def history_to_json(history) -> list:
    return [r.to_dict() for r in history]


def load_history(path) -> list:
    return [CycleRecord.from_dict(d) for d in io.read_json(path)]


def run_simulation(model: CrimeModel, data: SimData, cfg: SimConfig, train_cfg: TrainConfig, out_dir=None, callback=None):
    """Chain ``cfg.cycles`` cycles; returns the list of :class:`CycleRecord`.

    With ``out_dir`` the history, model weights, stream and patrol channel are
    written after every cycle, and a rerun resumes after the last completed
    cycle found there.
    """
    stream = np.asarray(data.counts, dtype=np.float64).copy()
    history = []
    start = 1
    if out_dir is not None:
        out_dir = Path(out_dir)
        resumed = _resume(out_dir, model, data)
        if resumed is not None:
            history, stream = resumed
            start = len(history) + 1
            log.info("resuming simulation after cycle %d", len(history))
    for k in range(start, cfg.cycles + 1):
        model, record, stream, _ = run_cycle(model, data, cfg, train_cfg, k, stream)
        history.append(record)
        if out_dir is not None:
            _persist(out_dir, model, data, history, stream)
        if callback is not None:
            callback(record)
    return history


def _state_path(out_dir: Path, cycle: int) -> Path:
    return out_dir / f"sim_state_{cycle}.npz"


def _persist(out_dir: Path, model, data: SimData, history, stream) -> None:
    k = len(history)
    arrays = {f"model/{name}": v for name, v in state_arrays(model).items()}
    arrays["stream"] = stream
    arrays["patrol_exposure"] = data.features.values[:, :, -1]
    io.write_npz(_state_path(out_dir, k), arrays)
    # the history length names the state file to resume from
    io.write_json(out_dir / "history.json", history_to_json(history))
    previous = _state_path(out_dir, k - 1)
    if previous.exists():
        previous.unlink()


def _resume(out_dir: Path, model, data: SimData):
    hist_path = out_dir / "history.json"
    if not hist_path.exists():
        return None
    history = load_history(hist_path)
    state_path = _state_path(out_dir, len(history))
    if not history or not state_path.exists():
        return None
    with np.load(state_path, allow_pickle=False) as z:
        load_arrays(model, {k[len("model/"):]: z[k] for k in z.files if k.startswith("model/")})
        stream = z["stream"].copy()
        data.features.values[:, :, -1] = z["patrol_exposure"]
    return history, stream
