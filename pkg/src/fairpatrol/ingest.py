"""Incident and zone parsing plus the point-in-polygon spatial join."""

from __future__ import annotations

import csv
import json
import logging
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

log = logging.getLogger(__name__)

MALFORMED_LIMIT = 0.5


class IngestError(RuntimeError):
    pass


class BBox(NamedTuple):
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    def contains(self, lat: float, lon: float) -> bool:
        return self.lat_min <= lat <= self.lat_max and self.lon_min <= lon <= self.lon_max


class IncidentRecord(NamedTuple):
    timestamp: datetime
    lat: float
    lon: float


@dataclass
class Zone:
    zone_id: str
    rings: list  # list of (k, 2) float arrays of lon/lat, closed
    pct_minority: float = 0.0
    median_income_norm: float = 0.0
    poverty_rate: float = 0.0
    zero_filled: bool = False
    median_income: float | None = None

    def __post_init__(self):
        rings = []
        for ring in self.rings:
            r = np.asarray(ring, dtype=np.float64)
            if r.ndim != 2 or r.shape[1] != 2:
                raise IngestError(f"zone {self.zone_id}: ring must be a list of lon/lat pairs")
            if len(r) < 4 or not np.array_equal(r[0], r[-1]):
                raise IngestError(f"zone {self.zone_id}: ring needs >= 4 vertices with first == last")
            rings.append(r)
        self.rings = rings
        for name in ("pct_minority", "median_income_norm", "poverty_rate"):
            if not np.isfinite(getattr(self, name)):
                raise IngestError(f"zone {self.zone_id}: {name} is not finite")

    @property
    def demographics(self) -> np.ndarray:
        return np.array([self.pct_minority, self.median_income_norm, self.poverty_rate])


@dataclass
class JoinReport:
    loaded: int
    assigned: int
    dropped: int
    zones_touched: int
    per_zone: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "loaded": self.loaded,
            "assigned": self.assigned,
            "dropped": self.dropped,
            "zones_touched": self.zones_touched,
            "per_zone": dict(sorted(self.per_zone.items())),
        }


class Assignment(NamedTuple):
    index: int
    timestamp: datetime
    zone_id: str


@dataclass
class ParseStats:
    rows: int = 0
    malformed: int = 0
    outside_bbox: int = 0
    outside_window: int = 0


# --------------------------------------------------------------------------
# Incidents


_FRACTION = re.compile(r"\.(\d+)")


def parse_timestamp(text: str) -> datetime:
    """ISO-8601 to an aware UTC datetime truncated to whole seconds.

    Naive timestamps are taken to be UTC already.
    """
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    # older fromisoformat only takes 3 or 6 fractional digits
    text = _FRACTION.sub(lambda m: "." + (m.group(1) + "000000")[:6], text)
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc).replace(microsecond=0)


def parse_incidents_with_stats(path, bbox: BBox, window=None):
    path = Path(path)
    if not path.exists():
        raise IngestError(f"incident file not found: {path}")
    stats = ParseStats()
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return records, stats
        missing = {"timestamp", "lat", "lon"} - set(reader.fieldnames)
        if missing:
            raise IngestError(f"{path}: missing required columns {sorted(missing)}")
        for row in reader:
            stats.rows += 1
            try:
                ts = parse_timestamp(row["timestamp"])
                lat = float(row["lat"])
                lon = float(row["lon"])
                if not (np.isfinite(lat) and np.isfinite(lon)):
                    raise ValueError
            except (TypeError, ValueError):
                stats.malformed += 1
                continue
            if window is not None and not (window[0] <= ts < window[1]):
                stats.outside_window += 1
                continue
            if not bbox.contains(lat, lon):
                stats.outside_bbox += 1
                continue
            records.append(IncidentRecord(ts, lat, lon))
    if stats.rows and stats.malformed / stats.rows > MALFORMED_LIMIT:
        raise IngestError(
            f"{path}: {stats.malformed}/{stats.rows} rows malformed; wrong schema?"
        )
    if stats.malformed:
        log.warning("%s: skipped %d malformed rows", path, stats.malformed)
    return records, stats


def parse_incidents(path, bbox: BBox, window=None) -> list[IncidentRecord]:
    """Read an incident CSV and keep the rows inside ``bbox`` (inclusive).

    ``window`` is an optional ``(start, end)`` pair of UTC datetimes; rows
    outside ``[start, end)`` are filtered the same way as out-of-box rows.
    """
    return parse_incidents_with_stats(path, bbox, window)[0]


# --------------------------------------------------------------------------
# Zones


def _rings_from_geometry(geom) -> list:
    kind = geom.get("type")
    coords = geom.get("coordinates")
    if kind == "Polygon":
        return [list(r) for r in coords]
    if kind == "MultiPolygon":
        return [list(r) for poly in coords for r in poly]
    raise IngestError(f"unsupported geometry type {kind!r}")


def _as_fraction(value):
    if value is None:
        return None
    try:
        v = float(value)
    except (TypeError, ValueError):
        return None
    return v if np.isfinite(v) else None


def load_zones(path) -> list[Zone]:
    """Load zones from a GeoJSON FeatureCollection.

    Median income is min-max normalised across the zones that report it.
    A zone missing any demographic field gets all three set to zero and is
    flagged ``zero_filled``.
    """
    path = Path(path)
    if not path.exists():
        raise IngestError(f"zone file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    feats = doc.get("features", [])
    raw = []
    for feat in feats:
        props = feat.get("properties") or {}
        zid = props.get("zone_id")
        if zid is None:
            raise IngestError(f"{path}: feature without zone_id")
        vals = [_as_fraction(props.get(k)) for k in ("pct_minority", "median_income", "poverty_rate")]
        raw.append((str(zid), _rings_from_geometry(feat["geometry"]), vals))

    incomes = [v[1] for _, _, v in raw if all(x is not None for x in v)]
    lo, hi = (min(incomes), max(incomes)) if incomes else (0.0, 0.0)
    zones = []
    for zid, rings, vals in raw:
        if any(x is None for x in vals):
            zones.append(Zone(zid, rings, 0.0, 0.0, 0.0, zero_filled=True))
            continue
        pct, income, pov = vals
        norm = (income - lo) / (hi - lo) if hi > lo else 0.0
        zones.append(Zone(zid, rings, pct, norm, pov, median_income=income))
    ids = [z.zone_id for z in zones]
    if len(set(ids)) != len(ids):
        raise IngestError(f"{path}: duplicate zone_id values")
    return zones


def zones_to_geojson(zones: Sequence[Zone]) -> dict:
    features = []
    for z in zones:
        props = {"zone_id": z.zone_id}
        if not z.zero_filled:
            income = z.median_income if z.median_income is not None else z.median_income_norm
            props.update(
                pct_minority=z.pct_minority,
                median_income=income,
                poverty_rate=z.poverty_rate,
            )
        features.append(
            {
                "type": "Feature",
                "properties": props,
                "geometry": {
                    "type": "MultiPolygon",
                    "coordinates": [[r.tolist()] for r in z.rings],
                },
            }
        )
    return {"type": "FeatureCollection", "features": features}


# --------------------------------------------------------------------------
# Point in polygon


def _ring_area2(ring: np.ndarray) -> float:
    x, y = ring[:, 0], ring[:, 1]
    return float(np.dot(x[:-1], y[1:]) - np.dot(x[1:], y[:-1]))


def _points_in_ring(px, py, ring, inside, boundary):
    """Toggle ``inside`` by even-odd crossings; mark edge hits in ``boundary``."""
    x1, y1 = ring[:-1, 0], ring[:-1, 1]
    x2, y2 = ring[1:, 0], ring[1:, 1]
    for a, b, c, d in zip(x1, y1, x2, y2):
        cross = (c - a) * (py - b) - (d - b) * (px - a)
        on_seg = (
            (cross == 0.0)
            & (px >= min(a, c)) & (px <= max(a, c))
            & (py >= min(b, d)) & (py <= max(b, d))
        )
        boundary |= on_seg
        if b == d:
            continue
        straddle = (b > py) != (d > py)
        x_at = a + (py - b) * (c - a) / (d - b)
        inside ^= straddle & (px < x_at)


def points_in_zone(lon, lat, zone: Zone) -> np.ndarray:
    """Vectorised :func:`point_in_polygon` over arrays of coordinates."""
    px = np.atleast_1d(np.asarray(lon, dtype=np.float64))
    py = np.atleast_1d(np.asarray(lat, dtype=np.float64))
    inside = np.zeros(px.shape, dtype=bool)
    boundary = np.zeros(px.shape, dtype=bool)
    for ring in zone.rings:
        if _ring_area2(ring) == 0.0:
            continue
        lo = ring.min(axis=0)
        hi = ring.max(axis=0)
        near = (px >= lo[0]) & (px <= hi[0]) & (py >= lo[1]) & (py <= hi[1])
        if not near.any():
            continue
        sub_in = inside[near]
        sub_b = boundary[near]
        _points_in_ring(px[near], py[near], ring, sub_in, sub_b)
        inside[near] = sub_in
        boundary[near] = sub_b
    return inside | boundary


def point_in_polygon(p, zone: Zone) -> bool:
    """Even-odd ray casting over all rings of ``zone``.

    ``p`` is a ``(lon, lat)`` pair. Points on an edge or vertex are inside.
    Rings with zero area contain nothing.
    """
    return bool(points_in_zone(p[0], p[1], zone)[0])


def spatial_join(incidents: Sequence[IncidentRecord], zones: Sequence[Zone]):
    """Assign every incident to one zone or drop it.

    A point inside several zones goes to the smallest ``zone_id``.
    Returns ``(assignments, report)`` where ``assignments`` lists only the
    assigned incidents, in input order.
    """
    if not zones:
        raise IngestError("spatial join needs at least one zone")
    n = len(incidents)
    lon = np.fromiter((r.lon for r in incidents), dtype=np.float64, count=n)
    lat = np.fromiter((r.lat for r in incidents), dtype=np.float64, count=n)
    owner = np.full(n, -1, dtype=np.int64)
    order = sorted(range(len(zones)), key=lambda i: zones[i].zone_id)
    # Visit zones in id order so the first hit is the tie winner.
    for zi in order:
        free = owner < 0
        if not free.any():
            break
        hit = np.zeros(n, dtype=bool)
        hit[free] = points_in_zone(lon[free], lat[free], zones[zi])
        owner[hit] = zi

    assignments = [
        Assignment(i, incidents[i].timestamp, zones[owner[i]].zone_id)
        for i in np.flatnonzero(owner >= 0)
    ]
    per_zone = {z.zone_id: 0 for z in zones}
    for a in assignments:
        per_zone[a.zone_id] += 1
    report = JoinReport(
        loaded=n,
        assigned=len(assignments),
        dropped=n - len(assignments),
        zones_touched=sum(1 for c in per_zone.values() if c > 0),
        per_zone=per_zone,
    )
    return assignments, report
