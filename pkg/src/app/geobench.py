"""Validation math for reference surfaces and sensor noise.

Clouds are compared against a 2.5D Delaunay mesh of a reference cloud (per-point closest
distance, reported in centimetres); time series are characterised with the overlapping Allan
deviation and the noise terms read off its log-log curve.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import Delaunay, QhullError, cKDTree

from .grid import PointCloud
from .logger import log
from .stores import read_text

BIAS_INSTABILITY_FACTOR = 0.664
DISTANCE_CHUNK = 200_000
NEAREST_TRIANGLES = 16


class GeometryError(ValueError):
    """Input points cannot be triangulated."""


@dataclass
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self) -> None:
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.triangles.size and (
            self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)
        ):
            raise GeometryError("Triangle indices must refer to existing vertices.")

    def __len__(self) -> int:
        return int(self.triangles.shape[0])

    def corners(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        tri = self.triangles
        return self.vertices[tri[:, 0]], self.vertices[tri[:, 1]], self.vertices[tri[:, 2]]

    def areas(self) -> np.ndarray:
        a, b, c = self.corners()
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def delaunay_2_5d(cloud: PointCloud) -> TriangleMesh:
    """Triangulate the x-y projection and lift each vertex back to its source height."""
    pts = cloud.sanitized().points
    if len(pts) < 3:
        raise GeometryError(f"Need at least 3 points to triangulate; got {len(pts)}.")
    xy = pts[:, :2]
    centered = xy - xy.mean(axis=0)
    scale = float(np.abs(centered).max()) or 1.0
    if np.linalg.matrix_rank(centered / scale, tol=1e-9) < 2:
        raise GeometryError("Points are collinear in the x-y projection.")
    try:
        tri = Delaunay(xy)
    except QhullError as exc:
        raise GeometryError(f"Delaunay triangulation failed: {exc}") from exc
    mesh = TriangleMesh(pts, tri.simplices)
    a, b, c = mesh.corners()
    planar = 0.5 * np.abs(
        (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    )
    keep = planar > 1e-12 * scale * scale
    if not keep.all():
        mesh = TriangleMesh(pts, mesh.triangles[keep])
    return mesh


def closest_points_on_triangles(
    p: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray
) -> np.ndarray:
    """Closest point of each triangle (a, b, c) to ``p``; all arrays broadcast over (..., 3)."""
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.einsum("...i,...i->...", ab, ap)
    d2 = np.einsum("...i,...i->...", ac, ap)
    bp = p - b
    d3 = np.einsum("...i,...i->...", ab, bp)
    d4 = np.einsum("...i,...i->...", ac, bp)
    cp = p - c
    d5 = np.einsum("...i,...i->...", ab, cp)
    d6 = np.einsum("...i,...i->...", ac, cp)
    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    with np.errstate(divide="ignore", invalid="ignore"):
        v_ab = np.nan_to_num(d1 / (d1 - d3))
        w_ac = np.nan_to_num(d2 / (d2 - d6))
        w_bc = np.nan_to_num((d4 - d3) / ((d4 - d3) + (d5 - d6)))
        denom = va + vb + vc
        v_in = np.nan_to_num(vb / denom)
        w_in = np.nan_to_num(vc / denom)

    conditions = [
        (d1 <= 0) & (d2 <= 0),
        (d3 >= 0) & (d4 <= d3),
        (vc <= 0) & (d1 >= 0) & (d3 <= 0),
        (d6 >= 0) & (d5 <= d6),
        (vb <= 0) & (d2 >= 0) & (d6 <= 0),
        (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0),
    ]
    shape = np.broadcast_shapes(p.shape, a.shape)
    choices = [
        np.broadcast_to(a, shape),
        np.broadcast_to(b, shape),
        a + v_ab[..., None] * ab,
        np.broadcast_to(c, shape),
        a + w_ac[..., None] * ac,
        b + w_bc[..., None] * (c - b),
    ]
    face = a + ab * v_in[..., None] + ac * w_in[..., None]
    out = np.broadcast_to(face, shape).copy()
    # Later regions are written first so the earliest matching region wins.
    for cond, choice in reversed(list(zip(conditions, choices))):
        mask = np.broadcast_to(cond, shape[:-1])
        out[mask] = np.broadcast_to(choice, shape)[mask]
    return out


def _all_triangle_distances(
    points: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray
) -> np.ndarray:
    out = np.empty(points.shape[0])
    chunk = max(DISTANCE_CHUNK // max(len(a), 1), 1)
    for start in range(0, points.shape[0], chunk):
        p = points[start : start + chunk, None, :]
        closest = closest_points_on_triangles(p, a[None], b[None], c[None])
        out[start : start + chunk] = np.linalg.norm(closest - p, axis=2).min(axis=1)
    return out


def _distances(points: np.ndarray, mesh: TriangleMesh) -> np.ndarray:
    """Exact point-to-mesh distances, searching the nearest triangle centroids first.

    Every point of a triangle lies within ``reach`` of its centroid, so a triangle outside the
    k nearest centroids is at least ``ring - reach`` away. Points whose candidate minimum does
    not clear that bound are redone against the whole mesh.
    """
    a, b, c = mesh.corners()
    n = len(mesh)
    k = min(NEAREST_TRIANGLES, n)
    if k == n:
        return _all_triangle_distances(points, a, b, c)
    centroids = (a + b + c) / 3.0
    reach = float(np.linalg.norm(np.stack([a, b, c]) - centroids, axis=2).max())
    ring, nearest = cKDTree(centroids).query(points, k=k)

    out = np.empty(points.shape[0])
    chunk = max(DISTANCE_CHUNK // k, 1)
    for start in range(0, points.shape[0], chunk):
        rows = slice(start, start + chunk)
        p = points[rows, None, :]
        t = nearest[rows]
        closest = closest_points_on_triangles(p, a[t], b[t], c[t])
        out[rows] = np.linalg.norm(closest - p, axis=2).min(axis=1)

    unsure = np.flatnonzero(out > ring[:, -1] - reach)
    if unsure.size:
        out[unsure] = _all_triangle_distances(points[unsure], a, b, c)
    return out


def point_to_mesh_distance(p: Sequence[float], mesh: TriangleMesh) -> float:
    if len(mesh) == 0:
        raise GeometryError("Mesh has no triangles.")
    return float(_distances(np.asarray(p, dtype=np.float64).reshape(1, 3), mesh)[0])


@dataclass
class DeviationStats:
    count: int
    mean: float
    std_dev: float
    max: float
    bucket_width: float
    histogram: List[int] = field(default_factory=list)

    def buckets(self) -> List[Tuple[float, float, int]]:
        return [
            (k * self.bucket_width, (k + 1) * self.bucket_width, n)
            for k, n in enumerate(self.histogram)
        ]


def cloud_to_mesh_stats(
    cloud: PointCloud, mesh: TriangleMesh, bucket_width: float = 1.0
) -> DeviationStats:
    """Per-point distances to ``mesh`` summarised in centimetres."""
    if bucket_width <= 0:
        raise ValueError(f"Invalid bucket_width={bucket_width!r}; expected > 0.")
    if len(mesh) == 0:
        raise GeometryError("Mesh has no triangles.")
    points = cloud.sanitized().points
    if len(points) == 0:
        raise ValueError("Cloud has no finite points.")
    cm = _distances(points, mesh) * 100.0
    top = float(cm.max())
    bins = max(int(math.floor(top / bucket_width)) + 1, 1)
    index = np.minimum(np.floor(cm / bucket_width).astype(np.int64), bins - 1)
    return DeviationStats(
        count=int(cm.size),
        mean=float(cm.mean()),
        std_dev=float(cm.std()),
        max=top,
        bucket_width=bucket_width,
        histogram=np.bincount(index, minlength=bins).tolist(),
    )


# --- Allan deviation --------------------------------------------------------------


def log_spaced_taus(rate: float, n_samples: int, per_decade: int = 10) -> List[float]:
    """Averaging times m / rate with m log-spaced from 1 to n/2."""
    if rate <= 0:
        raise ValueError(f"Invalid rate={rate!r}; expected > 0.")
    top = n_samples // 2
    if top < 1:
        return []
    count = max(int(math.ceil(math.log10(top) * per_decade)) + 1, 1)
    ms = np.unique(np.round(np.logspace(0.0, math.log10(top), count)).astype(np.int64))
    return [float(m) / rate for m in ms]


def allan_deviation(
    samples: Sequence[float], rate: float, taus: Optional[Sequence[float]] = None
) -> List[Tuple[float, float]]:
    """Overlapping Allan deviation; taus needing more than half the series are skipped."""
    if rate <= 0:
        raise ValueError(f"Invalid rate={rate!r}; expected > 0.")
    y = np.asarray(samples, dtype=np.float64).reshape(-1)
    n = y.size
    if taus is None:
        taus = log_spaced_taus(rate, n)
    csum = np.concatenate([[0.0], np.cumsum(y - (y.mean() if n else 0.0))])
    out: List[Tuple[float, float]] = []
    skipped: List[float] = []
    for tau in taus:
        m = int(round(tau * rate))
        if m < 1 or 2 * m > n:
            skipped.append(float(tau))
            continue
        averages = (csum[m:] - csum[:-m]) / m
        diff = averages[m:] - averages[:-m]
        out.append((m / rate, float(math.sqrt(np.mean(diff * diff) / 2.0))))
    if skipped:
        log(
            f"[geobench] warning: omitted {len(skipped)} tau value(s) needing more than "
            f"{n} samples (largest {max(skipped):g}s)"
        )
    return out


def loglog_slope(
    curve: Sequence[Tuple[float, float]],
    tau_min: Optional[float] = None,
    tau_max: Optional[float] = None,
) -> float:
    pts = [
        (t, d)
        for t, d in curve
        if d > 0 and (tau_min is None or t >= tau_min) and (tau_max is None or t <= tau_max)
    ]
    if len(pts) < 2:
        raise ValueError("Need at least two positive points to fit a slope.")
    x = np.log10([t for t, _ in pts])
    y = np.log10([d for _, d in pts])
    return float(np.polyfit(x, y, 1)[0])


def _fixed_slope_intercept(curve: Sequence[Tuple[float, float]], slope: float) -> Optional[float]:
    """Intercept of a line of the given slope fitted where the local slope is within 0.25."""
    if len(curve) < 2:
        return None
    x = np.log10([t for t, _ in curve])
    with np.errstate(divide="ignore"):
        y = np.log10([d for _, d in curve])
    if not np.all(np.isfinite(y)):
        return None
    local = np.gradient(y, x)
    region = np.abs(local - slope) <= 0.25
    if not region.any():
        return None
    return float(np.mean(y[region] - slope * x[region]))


def noise_parameters(curve: Sequence[Tuple[float, float]]) -> Dict[str, Optional[float]]:
    """White-noise density (at 1 s), random-walk coefficient and bias instability."""
    if not curve:
        return {"noise_density": None, "random_walk": None, "bias_instability": None}
    white = _fixed_slope_intercept(curve, -0.5)
    walk = _fixed_slope_intercept(curve, 0.5)
    return {
        "noise_density": None if white is None else 10.0**white,
        "random_walk": None if walk is None else 10.0**walk * math.sqrt(3.0),
        "bias_instability": min(d for _, d in curve) / BIAS_INSTABILITY_FACTOR,
    }


# --- Files ----------------------------------------------------------------------


def load_xyz(path: Path) -> PointCloud:
    """Whitespace-separated ``x y z`` rows; ``#`` starts a comment."""
    rows: List[List[float]] = []
    for number, line in enumerate(read_text(path).splitlines(), start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        parts = text.replace(",", " ").split()
        if len(parts) < 3:
            raise ValueError(f"{path}:{number}: expected x y z, got {line!r}")
        try:
            rows.append([float(parts[0]), float(parts[1]), float(parts[2])])
        except ValueError as exc:
            raise ValueError(f"{path}:{number}: non-numeric value in {line!r}") from exc
    if not rows:
        raise ValueError(f"{path}: no points")
    return PointCloud(np.array(rows))


def load_series(path: Path) -> np.ndarray:
    """One sample per line; with several columns the last one is used."""
    values: List[float] = []
    for number, line in enumerate(read_text(path).splitlines(), start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        try:
            values.append(float(text.replace(",", " ").split()[-1]))
        except ValueError as exc:
            if not values and number == 1:
                continue  # header row
            raise ValueError(f"{path}:{number}: non-numeric sample {line!r}") from exc
    if not values:
        raise ValueError(f"{path}: no samples")
    return np.asarray(values)
