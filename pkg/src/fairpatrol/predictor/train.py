"""Windowed training, evaluation and checkpoints for :class:`CrimeModel`."""

from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .. import io
from .hawkes import history_segments
from .model import CrimeModel, StgnnConfig, load_arrays, state_arrays
from .zinb import zinb_nll_torch

log = logging.getLogger(__name__)


class TrainingError(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 100
    batch: int = 32
    window: int = 32
    lr: float = 1e-3
    weight_decay: float = 1e-4
    grad_clip: float = 5.0
    seed: int = 42
    stride: int = 1

    def __post_init__(self):
        for name in ("epochs", "batch", "window", "lr", "grad_clip", "stride"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")


@dataclass
class TrainingLog:
    epochs: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int | None = None
    best_val: float | None = None
    initial_train: float | None = None

    def rows(self):
        return list(zip(self.epochs, self.train_loss, self.val_loss))

    def save_csv(self, path) -> None:
        io.write_csv(path, ["epoch", "train_loss", "val_loss"], self.rows())

    @classmethod
    def load_csv(cls, path) -> "TrainingLog":
        out = cls()
        with open(path, encoding="utf-8") as fh:
            next(fh)
            for line in fh:
                e, tr, va = line.strip().split(",")
                out.epochs.append(int(e))
                out.train_loss.append(float(tr))
                out.val_loss.append(float(va))
        if out.val_loss:
            finite = [v for v in out.val_loss if np.isfinite(v)]
            if finite:
                out.best_val = min(finite)
                out.best_epoch = out.epochs[out.val_loss.index(out.best_val)]
        return out


def set_deterministic(threads: int = 1) -> None:
    torch.set_num_threads(threads)
    torch.use_deterministic_algorithms(True)


def _adj(adj) -> torch.Tensor:
    return torch.as_tensor(np.asarray(adj, dtype=np.float64))


def make_batch(X: np.ndarray, y: np.ndarray, starts, W: int, H: int):
    x = np.stack([X[:, s : s + W, :] for s in starts])
    target = np.stack([y[:, s : s + W] for s in starts])
    seg = history_segments(y, starts, W, H)
    return torch.from_numpy(x), torch.from_numpy(seg), torch.from_numpy(target)


def window_starts(steps: range, W: int, stride: int = 1) -> np.ndarray:
    last = steps.stop - W
    if last < steps.start:
        raise ValueError(f"range of {len(steps)} steps is shorter than window {W}")
    return np.arange(steps.start, last + 1, stride)


def gradients(model: torch.nn.Module, loss: torch.Tensor) -> dict:
    """Reverse-mode gradients of ``loss`` for every named parameter."""
    model.zero_grad(set_to_none=True)
    loss.backward()
    out = {}
    for name, p in model.named_parameters():
        g = p.grad if p.grad is not None else torch.zeros_like(p)
        if not torch.isfinite(g).all():
            raise TrainingError(f"non-finite gradient for parameter {name}")
        out[name] = g.detach().numpy().copy()
    return out


@torch.no_grad()
def predict_range(model: CrimeModel, X: np.ndarray, y: np.ndarray, adj, steps: range, chunk: int = 512):
    """ZINB parameters at every step of ``steps`` using real history.

    Each chunk carries ``receptive_field - 1`` steps of left context, so the
    result equals one long causal pass. Returns ``(mu, theta, pi)`` (N, len).
    """
    was_training = model.training
    model.eval()
    A = _adj(adj)
    H = model.cfg.history
    ctx_max = model.cfg.receptive_field - 1
    mus, thetas, pis = [], [], []
    for lo in range(steps.start, steps.stop, chunk):
        hi = min(lo + chunk, steps.stop)
        ctx = min(lo, ctx_max)
        s = lo - ctx
        x, seg, _ = make_batch(X, y, [s], hi - s, H)
        mu, theta, logit = model(x, seg, A)
        mus.append(mu[0, :, ctx:])
        thetas.append(theta[0, :, ctx:])
        pis.append(torch.sigmoid(logit[0, :, ctx:]))
    model.train(was_training)
    cat = lambda parts: torch.cat(parts, dim=1).numpy()
    return cat(mus), cat(thetas), cat(pis)


@torch.no_grad()
def evaluate(model: CrimeModel, X, y, adj, steps: range, chunk: int = 512) -> float:
    """Mean ZINB NLL over all node-steps of ``steps``."""
    was_training = model.training
    model.eval()
    A = _adj(adj)
    H = model.cfg.history
    ctx_max = model.cfg.receptive_field - 1
    total = 0.0
    count = 0
    for lo in range(steps.start, steps.stop, chunk):
        hi = min(lo + chunk, steps.stop)
        ctx = min(lo, ctx_max)
        s = lo - ctx
        x, seg, target = make_batch(X, y, [s], hi - s, H)
        mu, theta, logit = model(x, seg, A)
        sl = (slice(None), slice(None), slice(ctx, None))
        n = target[sl].numel()
        total += float(zinb_nll_torch(target[sl], mu[sl], theta[sl], logit[sl])) * n
        count += n
    model.train(was_training)
    return total / count


def fit(
    model: CrimeModel,
    X: np.ndarray,
    y: np.ndarray,
    adj,
    steps: range,
    cfg: TrainConfig,
    val_steps: range | None = None,
    epochs: int | None = None,
    tag: str = "train",
) -> TrainingLog:
    """Adam with weight decay and global-norm clipping over shuffled windows.

    Loss is the ZINB NLL at every window position. With ``val_steps`` the
    best-validation weights are restored at the end.
    """
    epochs = cfg.epochs if epochs is None else epochs
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    A = _adj(adj)
    H = model.cfg.history
    starts = window_starts(steps, cfg.window, cfg.stride)
    rng = np.random.default_rng(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed + 1)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    names = [n for n, _ in model.named_parameters()]

    out = TrainingLog()
    best_state = None
    for epoch in range(1, epochs + 1):
        model.train()
        order = rng.permutation(starts)
        total, count = 0.0, 0
        for b, lo in enumerate(range(0, len(order), cfg.batch)):
            x, seg, target = make_batch(X, y, order[lo : lo + cfg.batch], cfg.window, H)
            mu, theta, logit = model(x, seg, A, gen)
            loss = zinb_nll_torch(target, mu, theta, logit)
            if not torch.isfinite(loss):
                raise TrainingError(f"{tag}: non-finite loss at epoch {epoch}, batch {b}")
            opt.zero_grad(set_to_none=True)
            loss.backward()
            for name, p in zip(names, model.parameters()):
                if p.grad is not None and not torch.isfinite(p.grad).all():
                    raise TrainingError(f"{tag}: non-finite gradient for {name} at epoch {epoch}, batch {b}")
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            opt.step()
            total += float(loss.detach()) * target.numel()
            count += target.numel()
        train_loss = total / count
        val_loss = evaluate(model, X, y, adj, val_steps) if val_steps is not None else float("nan")
        out.epochs.append(epoch)
        out.train_loss.append(train_loss)
        out.val_loss.append(val_loss)
        if val_steps is not None and (out.best_val is None or val_loss < out.best_val):
            out.best_val = val_loss
            out.best_epoch = epoch
            best_state = copy.deepcopy(model.state_dict())
        log.info("%s epoch %d train %.6f val %.6f", tag, epoch, train_loss, val_loss)
    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    return out


def train(model: CrimeModel, features, counts, splits, graph, cfg: TrainConfig):
    """Fit on the train split, select on validation. Returns ``(model, log)``."""
    X = features.values if hasattr(features, "values") else features
    y = counts.values if hasattr(counts, "values") else counts
    adj = graph.a_combined if hasattr(graph, "a_combined") else graph
    y = np.asarray(y, dtype=np.float64)
    initial = evaluate(model, X, y, adj, splits.train)
    out = fit(model, X, y, adj, splits.train, cfg, val_steps=splits.val)
    out.initial_train = initial
    return model, out


# --------------------------------------------------------------------------
# Checkpoints


def save_checkpoint(path, model: CrimeModel, extra: dict | None = None) -> None:
    path = Path(path)
    io.write_npz(path.with_suffix(".npz"), state_arrays(model))
    manifest = {
        "stgnn": model.cfg.to_dict(),
        "n_nodes": model.n_nodes,
        "seed": model.seed,
        "n_parameters": model.n_parameters(),
    }
    manifest.update(extra or {})
    io.write_json(path.with_suffix(".json"), manifest)


def load_checkpoint(path) -> tuple[CrimeModel, dict]:
    path = Path(path)
    manifest = io.read_json(path.with_suffix(".json"))
    cfg = StgnnConfig(**manifest["stgnn"])
    model = CrimeModel(cfg, manifest["n_nodes"], manifest["seed"])
    with np.load(path.with_suffix(".npz"), allow_pickle=False) as data:
        load_arrays(model, {k: data[k] for k in data.files})
    model.eval()
    return model, manifest


def config_dict(cfg) -> dict:
    return asdict(cfg)
