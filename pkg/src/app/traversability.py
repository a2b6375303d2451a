"""Traversability estimation from local elevation patches.

Two estimators share one interface: the convolutional network (weights loaded from file) and a
geometric slope/roughness/step fallback used when no weights are available. Both consume
48x48 height patches re-centred on the evaluated cell.

Network layout (valid 3x3 convolutions, 2x2 floor max-pooling, channel-first flatten)::

    48x48x1 -> 46x46x32 -> 23x23x32 -> 21x21x64 -> 10x10x64 -> 8x8x64 -> 4x4x64
            -> 1024 -> 128 -> 64 -> 1 (sigmoid)

Weights file: an ASCII header (magic line, ``arch`` fingerprint line, ``END`` line) followed
by little-endian float32 values. Per layer the weights come first, then the biases;
convolution kernels are stored (filter, in-channel, ky, kx) and dense matrices (out, in).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Protocol, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .constants import (
    CNN_MAGIC,
    DEFAULT_MAP_RESOLUTION,
    DEFAULT_MAX_ROUGHNESS,
    DEFAULT_MAX_SLOPE,
    DEFAULT_MAX_STEP,
    INFERENCE_BATCH,
    LAYER_ELEVATION,
    LAYER_TRAVERSABILITY,
    PATCH_SIDE,
)
from .grid import CellIndex, GridMap
from .logger import log

CONV_SHAPES: Tuple[Tuple[int, int], ...] = ((32, 1), (64, 32), (64, 64))
DENSE_SHAPES: Tuple[Tuple[int, int], ...] = ((128, 1024), (64, 128), (1, 64))
KERNEL = 3
_SIGMOID_LOW = float(np.nextafter(0.0, 1.0))
_SIGMOID_HIGH = float(np.nextafter(1.0, 0.0))


class WeightsFormatError(ValueError):
    """Weights file does not match the declared network architecture."""


def architecture_fingerprint() -> str:
    parts = []
    for filters, channels in CONV_SHAPES:
        parts.append(f"conv{KERNEL}x{KERNEL}:{channels}>{filters}")
        parts.append("pool2")
    for out_dim, in_dim in DENSE_SHAPES:
        parts.append(f"dense:{in_dim}>{out_dim}")
    parts.append("sigmoid")
    return "arch " + " ".join(parts)


def parameter_count() -> int:
    total = 0
    for filters, channels in CONV_SHAPES:
        total += filters * channels * KERNEL * KERNEL + filters
    for out_dim, in_dim in DENSE_SHAPES:
        total += out_dim * in_dim + out_dim
    return total


@dataclass(frozen=True)
class PatchSpec:
    side: int = PATCH_SIDE

    def __post_init__(self) -> None:
        if self.side <= 0 or self.side % 2:
            raise ValueError(f"Invalid patch side={self.side!r}; expected a positive even value.")

    @property
    def half(self) -> int:
        return self.side // 2

    def extent(self, resolution: float) -> float:
        return self.side * resolution


@dataclass(frozen=True)
class FallbackParams:
    max_slope: float = DEFAULT_MAX_SLOPE
    max_roughness: float = DEFAULT_MAX_ROUGHNESS
    max_step: float = DEFAULT_MAX_STEP
    resolution: float = DEFAULT_MAP_RESOLUTION

    def __post_init__(self) -> None:
        for name in ("max_slope", "max_roughness", "max_step", "resolution"):
            if getattr(self, name) <= 0:
                raise ValueError(f"Invalid {name}={getattr(self, name)!r}; expected > 0.")


# --- Network ------------------------------------------------------------------


class CnnModel:
    """Inference-only network; parameters are immutable after construction."""

    def __init__(
        self,
        conv: Sequence[Tuple[np.ndarray, np.ndarray]],
        dense: Sequence[Tuple[np.ndarray, np.ndarray]],
    ) -> None:
        if len(conv) != len(CONV_SHAPES) or len(dense) != len(DENSE_SHAPES):
            raise WeightsFormatError("Layer count does not match the declared architecture.")
        self.conv: List[Tuple[np.ndarray, np.ndarray]] = []
        for (w, b), (filters, channels) in zip(conv, CONV_SHAPES):
            w = np.array(w, dtype=np.float64)
            b = np.array(b, dtype=np.float64)
            if w.shape != (filters, channels, KERNEL, KERNEL) or b.shape != (filters,):
                raise WeightsFormatError(
                    f"Convolution layer shape {w.shape}/{b.shape} does not match "
                    f"({filters}, {channels}, {KERNEL}, {KERNEL})."
                )
            w.setflags(write=False)
            b.setflags(write=False)
            self.conv.append((w, b))
        self.dense: List[Tuple[np.ndarray, np.ndarray]] = []
        for (w, b), (out_dim, in_dim) in zip(dense, DENSE_SHAPES):
            w = np.array(w, dtype=np.float64)
            b = np.array(b, dtype=np.float64)
            if w.shape != (out_dim, in_dim) or b.shape != (out_dim,):
                raise WeightsFormatError(
                    f"Dense layer shape {w.shape}/{b.shape} does not match ({out_dim}, {in_dim})."
                )
            w.setflags(write=False)
            b.setflags(write=False)
            self.dense.append((w, b))

    @classmethod
    def from_flat(cls, values: np.ndarray) -> "CnnModel":
        flat = np.asarray(values, dtype=np.float64).reshape(-1)
        expected = parameter_count()
        if flat.size != expected:
            raise WeightsFormatError(
                f"Weights hold {flat.size} values; architecture needs {expected}."
            )
        pos = 0

        def take(shape: Tuple[int, ...]) -> np.ndarray:
            nonlocal pos
            size = int(np.prod(shape))
            chunk = flat[pos : pos + size].reshape(shape)
            pos += size
            return chunk

        conv = []
        for filters, channels in CONV_SHAPES:
            w = take((filters, channels, KERNEL, KERNEL))
            conv.append((w, take((filters,))))
        dense = []
        for out_dim, in_dim in DENSE_SHAPES:
            w = take((out_dim, in_dim))
            dense.append((w, take((out_dim,))))
        return cls(conv, dense)

    @classmethod
    def zeros(cls) -> "CnnModel":
        return cls.from_flat(np.zeros(parameter_count()))

    @classmethod
    def random(cls, rng: np.random.Generator, scale: float = 1.0) -> "CnnModel":
        conv = []
        for filters, channels in CONV_SHAPES:
            std = scale / np.sqrt(channels * KERNEL * KERNEL)
            conv.append(
                (
                    rng.normal(0.0, std, (filters, channels, KERNEL, KERNEL)),
                    rng.normal(0.0, 0.1 * scale, filters),
                )
            )
        dense = []
        for out_dim, in_dim in DENSE_SHAPES:
            std = scale / np.sqrt(in_dim)
            dense.append(
                (rng.normal(0.0, std, (out_dim, in_dim)), rng.normal(0.0, 0.1 * scale, out_dim))
            )
        return cls(conv, dense)

    def flat(self) -> np.ndarray:
        parts: List[np.ndarray] = []
        for w, b in list(self.conv) + list(self.dense):
            parts.append(w.reshape(-1))
            parts.append(b.reshape(-1))
        return np.concatenate(parts)

    def forward(self, patches: np.ndarray) -> np.ndarray:
        """Evaluate a batch of (B, 48, 48) patches; returns B values in (0, 1)."""
        x = np.asarray(patches, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        if x.shape[1:] != (PATCH_SIDE, PATCH_SIDE):
            raise ValueError(f"Patch batch has shape {x.shape}; expected (B, 48, 48).")
        x = x[:, None, :, :]
        for w, b in self.conv:
            windows = sliding_window_view(x, (KERNEL, KERNEL), axis=(2, 3))
            # (B, C, H, W, ky, kx) x (F, C, ky, kx) -> (B, H, W, F)
            y = np.tensordot(windows, w, axes=([1, 4, 5], [1, 2, 3]))
            y = np.maximum(y + b, 0.0)
            x = np.ascontiguousarray(y.transpose(0, 3, 1, 2))
            x = _max_pool(x)
        h = x.reshape(x.shape[0], -1)
        for w, b in self.dense[:-1]:
            h = np.maximum(h @ w.T + b, 0.0)
        w, b = self.dense[-1]
        z = (h @ w.T + b)[:, 0]
        return np.clip(expit(z), _SIGMOID_LOW, _SIGMOID_HIGH)


def _max_pool(x: np.ndarray) -> np.ndarray:
    b, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    trimmed = x[:, :, : 2 * h2, : 2 * w2]
    return trimmed.reshape(b, c, h2, 2, w2, 2).max(axis=(3, 5))


def cnn_forward(model: CnnModel, patch: np.ndarray) -> float:
    return float(model.forward(patch)[0])


def save_weights(model: CnnModel, path: Path) -> None:
    header = f"{CNN_MAGIC}\n{architecture_fingerprint()}\nEND\n".encode("ascii")
    payload = model.flat().astype("<f4").tobytes()
    try:
        Path(path).write_bytes(header + payload)
    except OSError as exc:
        raise OSError(f"Unable to write weights file {path}: {exc}") from exc


def load_weights(path: Path) -> CnnModel:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise OSError(f"Unable to read weights file {path}: {exc}") from exc
    lines = data.split(b"\n", 3)
    if len(lines) < 4 or lines[0].decode("ascii", "replace") != CNN_MAGIC:
        raise WeightsFormatError(f"{path}: missing {CNN_MAGIC} header.")
    fingerprint = lines[1].decode("ascii", "replace")
    if fingerprint != architecture_fingerprint():
        raise WeightsFormatError(
            f"{path}: architecture {fingerprint!r} does not match {architecture_fingerprint()!r}."
        )
    if lines[2] != b"END":
        raise WeightsFormatError(f"{path}: header is not terminated by END.")
    payload = lines[3]
    if len(payload) % 4:
        raise WeightsFormatError(f"{path}: payload is not a float32 array.")
    model = CnnModel.from_flat(np.frombuffer(payload, dtype="<f4"))
    log(f"[traversability] loaded CNN weights from {path} ({parameter_count()} parameters)")
    return model


# --- Geometric fallback -----------------------------------------------------------


def _plane_design(side: int, resolution: float) -> Tuple[np.ndarray, np.ndarray]:
    coords = np.arange(side, dtype=np.float64) * resolution
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    design = np.column_stack([xx.reshape(-1), yy.reshape(-1), np.ones(side * side)])
    return design, np.linalg.pinv(design)


def fallback_batch(patches: np.ndarray, params: FallbackParams) -> np.ndarray:
    z = np.asarray(patches, dtype=np.float64)
    if z.ndim == 2:
        z = z[None]
    side = z.shape[1]
    design, pinv = _plane_design(side, params.resolution)
    flat = z.reshape(z.shape[0], -1)
    coef = flat @ pinv.T
    residual = flat - coef @ design.T
    slope = np.hypot(coef[:, 0], coef[:, 1])
    roughness = np.sqrt(np.mean(residual * residual, axis=1))
    step = np.maximum(
        np.abs(np.diff(z, axis=1)).max(axis=(1, 2)),
        np.abs(np.diff(z, axis=2)).max(axis=(1, 2)),
    )
    return (
        np.clip(1.0 - slope / params.max_slope, 0.0, 1.0)
        * np.clip(1.0 - roughness / params.max_roughness, 0.0, 1.0)
        * np.clip(1.0 - step / params.max_step, 0.0, 1.0)
    )


def fallback_traversability(patch: np.ndarray, params: FallbackParams) -> float:
    """Slope is the plane-gradient magnitude (rise over run) compared against ``max_slope``."""
    return float(fallback_batch(patch, params)[0])


# --- Estimators ---------------------------------------------------------------


class TraversabilityEstimator(Protocol):
    name: str

    def evaluate(self, patches: np.ndarray) -> np.ndarray: ...


class CnnEstimator:
    name = "cnn"

    def __init__(self, model: CnnModel) -> None:
        self.model = model

    def evaluate(self, patches: np.ndarray) -> np.ndarray:
        return self.model.forward(patches)


class GeometricEstimator:
    name = "geometric"

    def __init__(self, params: Optional[FallbackParams] = None) -> None:
        self.params = params or FallbackParams()

    def evaluate(self, patches: np.ndarray) -> np.ndarray:
        return fallback_batch(patches, self.params)


def build_estimator(
    weights: Optional[Path], params: Optional[FallbackParams] = None
) -> TraversabilityEstimator:
    if weights is None:
        log("[traversability] no weights file configured; using geometric fallback")
        return GeometricEstimator(params)
    return CnnEstimator(load_weights(weights))


# --- Patches and layer fill -------------------------------------------------------


def _window_bounds(grid: GridMap, rows: np.ndarray, cols: np.ndarray, half: int) -> np.ndarray:
    return (
        (rows - half >= 0)
        & (rows + half <= grid.rows - 1)
        & (cols - half >= 0)
        & (cols + half <= grid.cols - 1)
    )


def extract_patch(
    grid: GridMap,
    center: CellIndex,
    spec: PatchSpec = PatchSpec(),
    min_known_fraction: float = 1.0,
) -> Optional[np.ndarray]:
    """Return the recentred side x side height window around ``center`` or ``None``."""
    half = spec.half
    rows = np.array([center.row])
    cols = np.array([center.col])
    if not _window_bounds(grid, rows, cols, half)[0]:
        return None
    elevation = grid.layer(LAYER_ELEVATION)
    h0 = elevation[center.row, center.col]
    if not np.isfinite(h0):
        return None
    window = elevation[
        center.row - half : center.row + half, center.col - half : center.col + half
    ]
    known = np.isfinite(window)
    if known.mean() < min_known_fraction:
        return None
    patch = window - h0
    if not known.all():
        patch = np.where(known, patch, 0.0)
    return patch


def fill_traversability_layer(
    grid: GridMap,
    estimator: TraversabilityEstimator,
    dirty_cells: Iterable[CellIndex],
    spec: PatchSpec = PatchSpec(),
    min_known_fraction: float = 1.0,
    batch: int = INFERENCE_BATCH,
) -> int:
    """Evaluate every dirty cell with a complete patch; others become unknown."""
    cells = sorted(set(dirty_cells))
    if not cells:
        return 0
    arr = np.array(cells, dtype=np.int64).reshape(-1, 2)
    rows, cols = arr[:, 0], arr[:, 1]
    elevation = grid.layer(LAYER_ELEVATION)
    trav = grid.layer(LAYER_TRAVERSABILITY)
    half = spec.half
    side = spec.side
    if grid.rows <= side or grid.cols <= side:
        trav[rows, cols] = np.nan
        return 0

    ok = _window_bounds(grid, rows, cols, half)
    safe_rows = np.clip(rows, 0, grid.rows - 1)
    safe_cols = np.clip(cols, 0, grid.cols - 1)
    centers = np.where(ok, elevation[safe_rows, safe_cols], np.nan)
    ok &= np.isfinite(centers)

    unknown = (~np.isfinite(elevation)).astype(np.int64)
    integral = np.zeros((grid.rows + 1, grid.cols + 1), dtype=np.int64)
    integral[1:, 1:] = unknown.cumsum(axis=0).cumsum(axis=1)
    r0 = np.clip(rows - half, 0, grid.rows - side)
    c0 = np.clip(cols - half, 0, grid.cols - side)
    missing = (
        integral[r0 + side, c0 + side]
        - integral[r0, c0 + side]
        - integral[r0 + side, c0]
        + integral[r0, c0]
    )
    if min_known_fraction >= 1.0:
        ok &= missing == 0
    else:
        ok &= 1.0 - missing / float(side * side) >= min_known_fraction

    trav[rows[~ok], cols[~ok]] = np.nan
    picked = np.nonzero(ok)[0]
    if picked.size == 0:
        return 0
    windows = sliding_window_view(elevation, (side, side))
    for start in range(0, picked.size, batch):
        chunk = picked[start : start + batch]
        patches = windows[r0[chunk], c0[chunk]] - centers[chunk][:, None, None]
        if min_known_fraction < 1.0:
            patches = np.where(np.isfinite(patches), patches, 0.0)
        trav[rows[chunk], cols[chunk]] = np.clip(estimator.evaluate(patches), 0.0, 1.0)
    return int(picked.size)
