"""Hourly count matrix, the 13-channel feature tensor, and the chronological split."""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from . import io

HOUR = 3600

CHANNELS = (
    "lag1",
    "lag2",
    "lag3",
    "roll24",
    "roll168",
    "sin_hour",
    "cos_hour",
    "sin_dow",
    "cos_dow",
    "pct_minority",
    "income_norm",
    "poverty_rate",
    "patrol_exposure",
)
N_FEATURES = len(CHANNELS)
DYNAMIC = slice(0, 5)
PATROL = CHANNELS.index("patrol_exposure")


class BinningError(ValueError):
    pass


def _utc(ts: datetime) -> datetime:
    if ts.tzinfo is None:
        return ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


@dataclass
class CountMatrix:
    values: np.ndarray  # (N, T) int64
    zone_order: list
    t0: datetime

    @property
    def shape(self):
        return self.values.shape

    @property
    def sparsity(self) -> float:
        return float(np.mean(self.values == 0))

    def save(self, path) -> None:
        path = Path(path)
        io.write_npy(path.with_suffix(".npy"), self.values)
        io.write_json(
            path.with_suffix(".json"),
            {
                "shape": list(self.values.shape),
                "dtype": str(self.values.dtype),
                "zone_order": list(self.zone_order),
                "t0": self.t0.isoformat(),
                "bin_width_seconds": HOUR,
            },
        )

    @classmethod
    def load(cls, path) -> "CountMatrix":
        path = Path(path)
        meta = io.read_json(path.with_suffix(".json"))
        values = np.load(path.with_suffix(".npy"), allow_pickle=False)
        return cls(values, meta["zone_order"], datetime.fromisoformat(meta["t0"]))


@dataclass
class FeatureTensor:
    values: np.ndarray  # (N, T, 13) float64
    zone_order: list
    t0: datetime
    channels: tuple = field(default=CHANNELS)

    def save(self, path) -> None:
        path = Path(path)
        io.write_npy(path.with_suffix(".npy"), self.values)
        io.write_json(
            path.with_suffix(".json"),
            {
                "shape": list(self.values.shape),
                "dtype": str(self.values.dtype),
                "channels": list(self.channels),
                "zone_order": list(self.zone_order),
                "t0": self.t0.isoformat(),
            },
        )

    @classmethod
    def load(cls, path) -> "FeatureTensor":
        path = Path(path)
        meta = io.read_json(path.with_suffix(".json"))
        values = np.load(path.with_suffix(".npy"), allow_pickle=False)
        if list(values.shape) != meta["shape"]:
            raise ValueError(f"{path}: array shape {values.shape} != sidecar {meta['shape']}")
        return cls(values, meta["zone_order"], datetime.fromisoformat(meta["t0"]), tuple(meta["channels"]))

    def copy(self) -> "FeatureTensor":
        return FeatureTensor(self.values.copy(), list(self.zone_order), self.t0, self.channels)


@dataclass(frozen=True)
class SplitIndex:
    T: int
    n_train: int
    n_val: int

    @property
    def train(self) -> range:
        return range(0, self.n_train)

    @property
    def val(self) -> range:
        return range(self.n_train, self.n_train + self.n_val)

    @property
    def test(self) -> range:
        return range(self.n_train + self.n_val, self.T)

    @property
    def n_test(self) -> int:
        return self.T - self.n_train - self.n_val


def n_hours(t0: datetime, t_end: datetime) -> int:
    seconds = (_utc(t_end) - _utc(t0)).total_seconds()
    return int(-(-seconds // HOUR))


def bin_counts(assignments, zone_order: Sequence[str], t0: datetime, t_end: datetime) -> CountMatrix:
    """Count incidents per zone and 1-hour bin over ``[t0, t_end)``.

    ``assignments`` is any iterable of objects with ``timestamp`` and
    ``zone_id``. A timestamp outside the window is an error.
    """
    t0 = _utc(t0)
    T = n_hours(t0, t_end)
    index = {z: i for i, z in enumerate(zone_order)}
    counts = np.zeros((len(zone_order), T), dtype=np.int64)
    base = t0.timestamp()
    for a in assignments:
        elapsed = _utc(a.timestamp).timestamp() - base
        b = int(elapsed // HOUR)
        if elapsed < 0 or b >= T:
            raise BinningError(f"incident at {a.timestamp.isoformat()} outside [{t0}, {t_end})")
        counts[index[a.zone_id], b] += 1
    return CountMatrix(counts, list(zone_order), t0)


def count_features(y: np.ndarray) -> np.ndarray:
    """Lag and trailing-mean channels for a (N, T) series.

    Every value at ``t`` uses ``y[:, :t]`` only. Rolling means average the
    available history when it is shorter than the window; ``t = 0`` is 0.
    """
    y = np.asarray(y, dtype=np.float64)
    N, T = y.shape
    out = np.zeros((N, T, 5))
    for k in (1, 2, 3):
        out[:, k:, k - 1] = y[:, : T - k]
    csum = np.zeros((N, T + 1))
    np.cumsum(y, axis=1, out=csum[:, 1:])
    t = np.arange(T)
    for ch, w in ((3, 24), (4, 168)):
        lo = np.maximum(t - w, 0)
        n = t - lo
        total = csum[:, t] - csum[:, lo]
        with np.errstate(invalid="ignore", divide="ignore"):
            out[:, :, ch] = np.where(n > 0, total / np.maximum(n, 1), 0.0)
    return out


def periodic_features(t0: datetime, T: int) -> np.ndarray:
    t0 = _utc(t0)
    start = t0.replace(minute=0, second=0, microsecond=0)
    h0 = start.hour
    d0 = start.weekday()
    steps = np.arange(T)
    hours = (h0 + steps) % 24
    dows = (d0 + (h0 + steps) // 24) % 7
    return np.stack(
        [
            np.sin(2 * np.pi * hours / 24),
            np.cos(2 * np.pi * hours / 24),
            np.sin(2 * np.pi * dows / 7),
            np.cos(2 * np.pi * dows / 7),
        ],
        axis=1,
    )


def build_features(counts: CountMatrix, zones, t0: datetime | None = None) -> FeatureTensor:
    """Assemble the (N, T, 13) tensor in ``CHANNELS`` order.

    ``zones`` must be in ``counts.zone_order``. Patrol exposure starts at 0.
    """
    t0 = counts.t0 if t0 is None else t0
    by_id = {z.zone_id: z for z in zones}
    ordered = [by_id[z] for z in counts.zone_order]
    N, T = counts.values.shape
    X = np.zeros((N, T, N_FEATURES))
    X[:, :, DYNAMIC] = count_features(counts.values)
    X[:, :, 5:9] = periodic_features(t0, T)[None, :, :]
    demo = np.array([z.demographics for z in ordered]).reshape(N, 3)
    X[:, :, 9:12] = demo[:, None, :]
    return FeatureTensor(X, list(counts.zone_order), _utc(t0))


def with_series(features: FeatureTensor, y: np.ndarray) -> FeatureTensor:
    """Copy of ``features`` with the dynamic channels rebuilt from ``y``."""
    out = features.copy()
    out.values[:, :, DYNAMIC] = count_features(y)
    return out


def set_patrol_exposure(features: FeatureTensor, P: np.ndarray, budget: float, steps: range) -> None:
    """Write per-zone mean patrol over a cycle, divided by ``budget``.

    ``P`` is (len(steps), N). Updates ``features`` in place for ``steps``.
    """
    exposure = np.asarray(P, dtype=np.float64).mean(axis=0) / budget
    features.values[:, steps.start : steps.stop, PATROL] = exposure[:, None]


def chrono_split(T: int) -> SplitIndex:
    if T < 10:
        raise ValueError(f"need at least 10 timesteps, got {T}")
    n_train = 7 * T // 10  # integer floor, immune to 0.7 * T rounding
    n_val = 3 * T // 20
    return SplitIndex(T, n_train, n_val)


# --------------------------------------------------------------------------
# Synthetic city


@dataclass
class SynthConfig:
    nx: int = 5
    ny: int = 5
    T: int = 1344
    start: str = "2019-01-07T00:00:00+00:00"
    base_rate: float = 0.08
    minority_ratio: float = 2.0
    minority_zones: tuple | None = None
    majority_hotspots: int = 2
    hotspot_share: float = 0.7
    excitation: float = 0.3
    decay: float = 1.0
    cell_deg: float = 0.01
    origin: tuple = (-76.70, 39.20)

    def validate(self) -> None:
        if self.nx <= 0 or self.ny <= 0 or self.T <= 0:
            raise ValueError("grid dimensions and T must be positive")
        if self.base_rate < 0 or self.excitation < 0 or self.decay <= 0:
            raise ValueError("rates must be non-negative and decay positive")
        if not 0 <= self.hotspot_share <= 1:
            raise ValueError("hotspot_share must lie in [0, 1]")


def default_minority_zones(nx: int, ny: int) -> tuple:
    """Western columns, first ``n // 2`` zones by id, are minority."""
    cols = (nx + 1) // 2
    n = nx * ny
    zones = [i for i in range(n) if (i % nx) < cols]
    target = n // 2
    return tuple(sorted(zones[:target] if len(zones) > target else zones))


def zone_rates(cfg: SynthConfig) -> tuple[np.ndarray, np.ndarray]:
    """Background hourly rates and the minority mask for a synthetic grid.

    Minority zones share one rate equal to ``minority_ratio`` times the
    majority mean. The majority burden is concentrated: ``hotspot_share``
    of it sits in ``majority_hotspots`` zones.
    """
    n = cfg.nx * cfg.ny
    minority = np.zeros(n, dtype=bool)
    idx = cfg.minority_zones if cfg.minority_zones is not None else default_minority_zones(cfg.nx, cfg.ny)
    minority[list(idx)] = True
    maj = np.flatnonzero(~minority)
    rates = np.zeros(n)
    rates[minority] = cfg.minority_ratio * cfg.base_rate
    if len(maj):
        total = cfg.base_rate * len(maj)
        k = min(cfg.majority_hotspots, len(maj))
        if k == 0 or k == len(maj):
            rates[maj] = cfg.base_rate
        else:
            # Hotspots sit away from the minority block: last majority ids.
            hot = maj[-k:]
            cold = maj[:-k]
            rates[hot] = cfg.hotspot_share * total / k
            rates[cold] = (1 - cfg.hotspot_share) * total / len(cold)
    return rates, minority


def synth_generate(cfg: SynthConfig, seed: int):
    """Desk-scale city: a grid of square zones and self-exciting hourly counts.

    Returns ``(zones, counts)``. Counts follow a discrete-time Hawkes
    recursion per zone, ``lambda(t) = r + a * sum_k exp(-b k) y(t-1-k)``,
    drawn Poisson. Deterministic in ``seed``.
    """
    from .ingest import Zone

    cfg.validate()
    rng = np.random.default_rng(seed)
    rates, minority = zone_rates(cfg)
    n = rates.size

    zones = []
    x0, y0 = cfg.origin
    d = cfg.cell_deg
    pct = np.where(minority, rng.uniform(0.55, 0.95, n), rng.uniform(0.05, 0.45, n))
    income = np.where(minority, rng.uniform(25e3, 55e3, n), rng.uniform(60e3, 120e3, n))
    poverty = np.where(minority, rng.uniform(0.15, 0.35, n), rng.uniform(0.03, 0.15, n))
    lo, hi = income.min(), income.max()
    for i in range(n):
        cx, cy = i % cfg.nx, i // cfg.nx
        ring = [
            [x0 + cx * d, y0 + cy * d],
            [x0 + (cx + 1) * d, y0 + cy * d],
            [x0 + (cx + 1) * d, y0 + (cy + 1) * d],
            [x0 + cx * d, y0 + (cy + 1) * d],
            [x0 + cx * d, y0 + cy * d],
        ]
        zones.append(
            Zone(
                zone_id=f"Z{i:02d}",
                rings=[np.round(np.array(ring), 10)],
                pct_minority=float(pct[i]),
                median_income_norm=float((income[i] - lo) / (hi - lo)) if hi > lo else 0.0,
                poverty_rate=float(poverty[i]),
                median_income=float(income[i]),
            )
        )

    y = np.zeros((n, cfg.T), dtype=np.int64)
    state = np.zeros(n)
    decay = np.exp(-cfg.decay)
    for t in range(cfg.T):
        lam = rates + cfg.excitation * state
        y[:, t] = rng.poisson(lam)
        state = decay * state + y[:, t]
    t0 = datetime.fromisoformat(cfg.start)
    counts = CountMatrix(y, [z.zone_id for z in zones], _utc(t0))
    return zones, counts


def synth_incidents(zones, counts: CountMatrix, seed: int):
    """Scatter the synthetic counts as point incidents inside their zones.

    Each incident gets a uniform second within its hour and a uniform point
    strictly inside its square zone, so re-ingesting reproduces ``counts``.
    """
    from .ingest import IncidentRecord

    rng = np.random.default_rng(seed + 1)
    out = []
    N, T = counts.values.shape
    for t in range(T):
        col = counts.values[:, t]
        for v in np.flatnonzero(col):
            ring = zones[v].rings[0]
            lo = ring.min(axis=0)
            hi = ring.max(axis=0)
            for _ in range(col[v]):
                sec = int(rng.integers(0, HOUR))
                fx, fy = rng.uniform(0.05, 0.95, 2)
                out.append(
                    IncidentRecord(
                        counts.t0 + timedelta(seconds=t * HOUR + sec),
                        float(lo[1] + fy * (hi[1] - lo[1])),
                        float(lo[0] + fx * (hi[0] - lo[0])),
                    )
                )
    return out
