"""Discrete measures, point clouds, ground costs and Csiszar divergences."""

import csv
import enum
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .errors import ContractViolation


@dataclass(frozen=True)
class PointCloud:
    """``n`` points in ``R^d`` with optional integer labels."""

    points: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise ContractViolation(f"point cloud must be a non-empty (n, d) array, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ContractViolation("point cloud has non-finite coordinates")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.labels is not None:
            lab = np.array(self.labels, dtype=np.int64)
            if lab.shape != (pts.shape[0],):
                raise ContractViolation(f"expected {pts.shape[0]} labels, got shape {lab.shape}")
            lab.setflags(write=False)
            object.__setattr__(self, "labels", lab)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self):
        return self.n


@dataclass(frozen=True)
class Measure:
    """Nonnegative weight vector with positive total mass."""

    weights: np.ndarray

    def __post_init__(self):
        w = check_weights(self.weights)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    def __len__(self):
        return self.weights.shape[0]


@dataclass(frozen=True)
class CostMatrix:
    entries: np.ndarray
    metric: str = "custom"

    def __post_init__(self):
        C = np.array(self.entries, dtype=np.float64)
        if C.ndim != 2:
            raise ContractViolation(f"cost matrix must be 2-D, got shape {C.shape}")
        if not np.all(np.isfinite(C)) or np.any(C < 0):
            raise ContractViolation("cost entries must be finite and nonnegative")
        C.setflags(write=False)
        object.__setattr__(self, "entries", C)

    @property
    def shape(self):
        return self.entries.shape

    @property
    def max(self) -> float:
        return float(self.entries.max())


class DivergenceKind(enum.Enum):
    KL = "KL"
    TV = "TV"

    @property
    def recession(self) -> float:
        """phi'_inf, the per-unit price of mass where the reference vanishes."""
        return math.inf if self is DivergenceKind.KL else 1.0

    def phi(self, t):
        t = np.asarray(t, dtype=np.float64)
        if self is DivergenceKind.TV:
            return np.abs(t - 1.0)
        return _xlogx(t) - t + 1.0

    @classmethod
    def parse(cls, value) -> "DivergenceKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ContractViolation(f"unknown divergence {value!r}; expected KL or TV") from None


def _xlogx(t):
    t = np.asarray(t, dtype=np.float64)
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = t[pos] * np.log(t[pos])
    return out


def check_weights(w) -> np.ndarray:
    """Validate a weight vector and return it as a fresh float64 array."""
    if isinstance(w, Measure):
        return w.weights.copy()
    arr = np.array(w, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ContractViolation(f"weights must be a non-empty vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise ContractViolation("weights must be finite and nonnegative")
    if arr.sum() <= 0:
        raise ContractViolation("measure must have positive mass")
    return arr


def as_points(X) -> np.ndarray:
    if isinstance(X, PointCloud):
        return X.points
    return PointCloud(X).points


def as_cost(C) -> np.ndarray:
    if isinstance(C, CostMatrix):
        return C.entries
    return CostMatrix(C).entries


def uniform_measure(n: int, total_mass: float = 1.0) -> Measure:
    if n < 1:
        raise ContractViolation("uniform measure needs n >= 1")
    if not total_mass > 0:
        raise ContractViolation("total mass must be positive")
    return Measure(np.full(n, total_mass / n))


def build_cost(X, Y) -> CostMatrix:
    """Squared euclidean ground cost ``C[i, j] = |x_i - y_j|^2``."""
    Xp, Yp = as_points(X), as_points(Y)
    if Xp.shape[1] != Yp.shape[1]:
        raise ContractViolation(f"dimension mismatch: {Xp.shape[1]} vs {Yp.shape[1]}")
    C = kernels.sqeuclidean(np.ascontiguousarray(Xp), np.ascontiguousarray(Yp))
    return CostMatrix(C, metric="sqeuclidean")


def csiszar_div(kind, x, y) -> float:
    """Csiszar divergence ``D_phi(x | y)`` between nonnegative vectors.

    Entries with ``y_i = 0`` are charged at the recession constant, so KL
    returns ``inf`` as soon as some ``x_i > 0`` sits on a zero of ``y``.
    """
    kind = DivergenceKind.parse(kind)
    x = np.asarray(x.weights if isinstance(x, Measure) else x, dtype=np.float64)
    y = np.asarray(y.weights if isinstance(y, Measure) else y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ContractViolation(f"length mismatch: {x.shape} vs {y.shape}")
    if np.any(x < 0) or np.any(y < 0):
        raise ContractViolation("divergence arguments must be nonnegative")
    on = y > 0
    if kind is DivergenceKind.KL:
        # x log(x/y) - x + y with logs split so tiny y cannot overflow the ratio
        xs, ys = x[on], y[on]
        pos = xs > 0
        terms = ys - xs
        terms[pos] += xs[pos] * (np.log(xs[pos]) - np.log(ys[pos]))
        total = float(np.sum(terms))
    else:
        total = float(np.sum(np.abs(x[on] - y[on])))
    off_mass = float(np.sum(x[~on]))
    if off_mass > 0:
        total += kind.recession * off_mass
    return total


def kl(x, y) -> float:
    return csiszar_div(DivergenceKind.KL, x, y)


def load_point_cloud_csv(path) -> PointCloud:
    """Read ``x0,...,x{d-1}[,label]`` rows (header required)."""
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ContractViolation(f"{path}: empty file") from None
        coord_cols = [i for i, h in enumerate(header) if h.startswith("x") and h[1:].isdigit()]
        coord_cols.sort(key=lambda i: int(header[i][1:]))
        if not coord_cols or [int(header[i][1:]) for i in coord_cols] != list(range(len(coord_cols))):
            raise ContractViolation(f"{path}: header must name columns x0..x(d-1)")
        label_col = header.index("label") if "label" in header else None
        pts, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                pts.append([float(row[i]) for i in coord_cols])
                if label_col is not None:
                    labels.append(int(row[label_col]))
            except (ValueError, IndexError) as exc:
                raise ContractViolation(f"{path}:{lineno}: {exc}") from None
    if not pts:
        raise ContractViolation(f"{path}: no points")
    return PointCloud(np.array(pts), np.array(labels) if label_col is not None else None)


def save_point_cloud_csv(cloud: PointCloud, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        header = [f"x{k}" for k in range(cloud.dim)]
        if cloud.labels is not None:
            header.append("label")
        w.writerow(header)
        for i in range(cloud.n):
            row = [repr(float(v)) for v in cloud.points[i]]
            if cloud.labels is not None:
                row.append(str(int(cloud.labels[i])))
            w.writerow(row)
