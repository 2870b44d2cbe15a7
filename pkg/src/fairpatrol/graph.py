"""Hybrid zone adjacency: Queen contiguity blended with demographic similarity."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from . import io

ALPHA_GEO = 0.60
ALPHA_FEAT = 0.40
THETA_SIM = 0.50
VERTEX_TOL = 1e-9


@dataclass
class HybridGraph:
    zone_order: list
    a_geo: np.ndarray
    a_geo_norm: np.ndarray
    a_feat: np.ndarray
    a_combined: np.ndarray
    params: dict = field(
        default_factory=lambda: {"alpha_geo": ALPHA_GEO, "alpha_feat": ALPHA_FEAT, "theta_sim": THETA_SIM}
    )

    @property
    def n(self) -> int:
        return len(self.zone_order)

    def stats(self) -> dict:
        off = ~np.eye(self.n, dtype=bool)
        nz = self.a_combined[self.a_combined != 0]
        geo_edges = int(self.a_geo[off].sum())
        feat_edges = int(self.a_feat[off].sum())
        return {
            "geo_edges": geo_edges,
            "geo_mean_degree": geo_edges / self.n,
            "geo_isolated": int(np.sum(self.a_geo.sum(axis=1) == 0)),
            "feat_edges": feat_edges,
            "feat_mean_degree": feat_edges / self.n,
            "combined_nonzeros": int(nz.size),
            "weight_min": float(nz.min()),
            "weight_max": float(nz.max()),
        }

    def to_json(self) -> dict:
        def edges(a):
            u, v = np.nonzero(a)
            return [[int(i), int(j)] for i, j in zip(u, v)]

        return {
            "zone_order": list(self.zone_order),
            "params": dict(self.params),
            "a_combined": self.a_combined.tolist(),
            "geo_edges": edges(self.a_geo),
            "feat_edges": edges(self.a_feat),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "HybridGraph":
        n = len(doc["zone_order"])
        a_geo = np.zeros((n, n))
        a_feat = np.zeros((n, n))
        for u, v in doc["geo_edges"]:
            a_geo[u, v] = 1.0
        for u, v in doc["feat_edges"]:
            a_feat[u, v] = 1.0
        p = doc["params"]
        a_geo_norm = row_normalize(a_geo)
        return cls(
            list(doc["zone_order"]),
            a_geo,
            a_geo_norm,
            a_feat,
            np.array(doc["a_combined"], dtype=np.float64),
            dict(p),
        )

    def save(self, path) -> None:
        io.write_json(Path(path), self.to_json())

    @classmethod
    def load(cls, path) -> "HybridGraph":
        return cls.from_json(io.read_json(path))


def queen_contiguity(zones: Sequence, tol: float = VERTEX_TOL) -> np.ndarray:
    """Binary adjacency: zones sharing at least one vertex (max-norm ``tol``)."""
    n = len(zones)
    pts = []
    owner = []
    for i, z in enumerate(zones):
        for ring in z.rings:
            pts.append(ring[:-1])
            owner.append(np.full(len(ring) - 1, i))
    a = np.zeros((n, n))
    if not pts:
        return a
    pts = np.concatenate(pts)
    owner = np.concatenate(owner)
    tree = cKDTree(pts)
    pairs = tree.query_pairs(r=tol, p=np.inf, output_type="ndarray")
    if len(pairs):
        u = owner[pairs[:, 0]]
        v = owner[pairs[:, 1]]
        keep = u != v
        a[u[keep], v[keep]] = 1.0
        a[v[keep], u[keep]] = 1.0
    return a


def row_normalize(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    s = a.sum(axis=1, keepdims=True)
    return np.divide(a, s, out=np.zeros_like(a), where=s > 0)


def cosine_similarity(x: np.ndarray) -> np.ndarray:
    """Pairwise cosine; rows with zero norm are similar to nothing."""
    x = np.asarray(x, dtype=np.float64)
    norm = np.linalg.norm(x, axis=1)
    unit = np.divide(x, norm[:, None], out=np.zeros_like(x), where=norm[:, None] > 0)
    return unit @ unit.T


def feature_similarity(zones: Sequence, theta_sim: float = THETA_SIM) -> np.ndarray:
    x = np.array([z.demographics for z in zones]).reshape(len(zones), 3)
    for i, z in enumerate(zones):
        if getattr(z, "zero_filled", False):
            x[i] = 0.0
    sim = cosine_similarity(x)
    a = (sim >= theta_sim).astype(np.float64)
    np.fill_diagonal(a, 0.0)
    return a


def combine(a_geo_norm, a_feat, alpha_geo: float = ALPHA_GEO, alpha_feat: float = ALPHA_FEAT) -> np.ndarray:
    g = np.array(a_geo_norm, dtype=np.float64)
    f = np.array(a_feat, dtype=np.float64)
    if g.shape != f.shape:
        raise ValueError(f"shape mismatch {g.shape} vs {f.shape}")
    np.fill_diagonal(g, 0.0)
    np.fill_diagonal(f, 0.0)
    out = alpha_geo * g + alpha_feat * f
    np.fill_diagonal(out, 1.0)
    return out


def build_graph(
    zones: Sequence,
    alpha_geo: float = ALPHA_GEO,
    alpha_feat: float = ALPHA_FEAT,
    theta_sim: float = THETA_SIM,
) -> HybridGraph:
    a_geo = queen_contiguity(zones)
    a_geo_norm = row_normalize(a_geo)
    a_feat = feature_similarity(zones, theta_sim)
    return HybridGraph(
        [z.zone_id for z in zones],
        a_geo,
        a_geo_norm,
        a_feat,
        combine(a_geo_norm, a_feat, alpha_geo, alpha_feat),
        {"alpha_geo": alpha_geo, "alpha_feat": alpha_feat, "theta_sim": theta_sim},
    )
