"""Cellwise permeability and source fields.

Features are resolved at cell centres: a cell belongs to a feature when its
centre lies inside it.  Later features override earlier ones.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .geometry import GridGeometry


class FieldError(ValueError):
    pass


@dataclass(frozen=True)
class Rectangle:
    x0: float
    x1: float
    y0: float
    y1: float
    eta: float

    def covers(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return (x >= self.x0) & (x <= self.x1) & (y >= self.y0) & (y <= self.y1)


@dataclass(frozen=True)
class Channel:
    """Polyline of given width; covers points within ``width / 2`` of it."""

    points: tuple[tuple[float, float], ...]
    width: float
    eta: float

    def covers(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        pts = np.asarray(self.points, dtype=float)
        best = np.full(np.shape(x), np.inf)
        for (ax, ay), (bx, by) in zip(pts[:-1], pts[1:]):
            dx, dy = bx - ax, by - ay
            t = np.clip(((x - ax) * dx + (y - ay) * dy) / (dx * dx + dy * dy), 0.0, 1.0)
            best = np.minimum(best, np.hypot(x - ax - t * dx, y - ay - t * dy))
        return best <= 0.5 * self.width


Feature = Union[Rectangle, Channel]


@dataclass(frozen=True)
class FieldSpec:
    background: float = 1.0
    features: tuple[Feature, ...] = field(default_factory=tuple)
    raster: str | None = None

    def __post_init__(self):
        if not self.background > 0:
            raise FieldError("background permeability must be positive")
        for f in self.features:
            if not f.eta > 0:
                raise FieldError(f"feature contrast must be positive, got {f.eta}")


@dataclass(frozen=True)
class PermeabilityField:
    values: np.ndarray

    def __post_init__(self):
        v = self.values
        if not (np.all(np.isfinite(v)) and np.all(v > 0)):
            raise FieldError("permeability must be positive and finite")
        v.setflags(write=False)


@dataclass(frozen=True)
class SourceField:
    values: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise FieldError("source must be finite")
        self.values.setflags(write=False)


def read_raster(path, nf: int) -> np.ndarray:
    """Read an ``nf x nf`` plain-text grid (first line ``nf nf``, rows from
    the bottom of the domain upwards)."""
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    try:
        rows, cols = (int(t) for t in lines[0].split())
        data = np.array([[float(t) for t in ln.split()] for ln in lines[1:]])
    except ValueError as exc:
        raise FieldError(f"malformed raster {path}: {exc}") from None
    if (rows, cols) != (nf, nf) or data.shape != (nf, nf):
        raise FieldError(f"raster shape {data.shape} (header {rows}x{cols}) does not match grid {nf}x{nf}")
    return data.ravel()


def write_grid(path, values: np.ndarray, shape: tuple[int, int], fmt: str = "%.6g") -> None:
    """Write a cell or edge array in the raster text format."""
    rows, cols = shape
    grid = np.asarray(values).reshape(rows, cols)
    with open(path, "w") as fh:
        fh.write(f"{rows} {cols}\n")
        for row in grid:
            fh.write(" ".join(fmt % v for v in row) + "\n")


def realize_field(spec: FieldSpec, geom: GridGeometry) -> PermeabilityField:
    if spec.raster is not None:
        return PermeabilityField(read_raster(spec.raster, geom.nf))
    x, y = geom.cell_centers()
    values = np.full(geom.n_cells, float(spec.background))
    for feat in spec.features:
        values[feat.covers(x, y)] = feat.eta * spec.background
    return PermeabilityField(values)


def realize_source(kind, geom: GridGeometry) -> SourceField:
    """Constant (scalar) or per-cell source density."""
    arr = np.asarray(kind, dtype=float)
    if arr.ndim == 0:
        return SourceField(np.full(geom.n_cells, float(arr)))
    arr = arr.ravel()
    if arr.shape != (geom.n_cells,):
        raise FieldError(f"source has {arr.size} entries, grid has {geom.n_cells} cells")
    return SourceField(arr.copy())


def manufactured_source(geom: GridGeometry) -> SourceField:
    """Source for u = sin(pi x) sin(pi y) with unit permeability, at cell centres."""
    x, y = geom.cell_centers()
    return SourceField(2 * np.pi**2 * np.sin(np.pi * x) * np.sin(np.pi * y))


# Built-in synthetic media.  Coordinates are in the unit square, so the same
# spec can be realised at any resolution.  Channels must span at least two
# cells at nf = 50; one-cell channels are not resolved by the local problems.
CHANNEL_WIDTH = 0.045


def inclusions_field(eta: float = 1e4) -> FieldSpec:
    """Isolated inclusions plus short channels."""
    boxes = [
        (0.06, 0.12, 0.08, 0.16), (0.30, 0.36, 0.12, 0.18), (0.72, 0.80, 0.06, 0.12),
        (0.50, 0.56, 0.32, 0.40), (0.14, 0.20, 0.46, 0.52), (0.84, 0.90, 0.40, 0.48),
        (0.38, 0.44, 0.62, 0.68), (0.64, 0.70, 0.74, 0.80), (0.10, 0.16, 0.82, 0.90),
        (0.86, 0.92, 0.86, 0.92),
    ]
    channels = [
        ((0.08, 0.25), (0.30, 0.25)),
        ((0.65, 0.14), (0.65, 0.46)),
        ((0.22, 0.77), (0.42, 0.77)),
        ((0.66, 0.64), (0.94, 0.64)),
        ((0.44, 0.06), (0.56, 0.20)),
    ]
    feats: list[Feature] = [Rectangle(*b, eta=eta) for b in boxes]
    feats += [Channel(tuple(c), CHANNEL_WIDTH, eta) for c in channels]
    return FieldSpec(1.0, tuple(feats))


def channels_field(eta: float = 1e4) -> FieldSpec:
    """Long channels crossing many coarse edges, plus a few inclusions."""
    channels = [
        ((0.0, 0.1), (0.5, 0.1), (0.5, 0.3), (1.0, 0.3)),
        ((0.0, 0.5), (0.7, 0.5), (0.7, 0.7), (1.0, 0.7)),
        ((0.0, 0.7), (0.3, 0.7), (0.3, 0.9), (1.0, 0.9)),
        ((0.3, 0.0), (0.3, 0.3), (0.1, 0.3), (0.1, 1.0)),
        ((0.9, 0.0), (0.9, 0.5)),
    ]
    boxes = [(0.12, 0.18, 0.36, 0.42), (0.52, 0.58, 0.70, 0.76), (0.86, 0.92, 0.36, 0.42)]
    feats: list[Feature] = [Channel(tuple(c), CHANNEL_WIDTH, eta) for c in channels]
    feats += [Rectangle(*b, eta=eta) for b in boxes]
    return FieldSpec(1.0, tuple(feats))


BUILTIN_FIELDS = {"inclusions": inclusions_field, "channels": channels_field}


def builtin_field(name: str, eta: float) -> FieldSpec:
    try:
        return BUILTIN_FIELDS[name](eta)
    except KeyError:
        raise FieldError(f"unknown field {name!r}; choose from {sorted(BUILTIN_FIELDS)}") from None


def checkerboard(geom: GridGeometry, eta: float, period: int = 1) -> PermeabilityField:
    idx = np.arange(geom.n_cells)
    i, j = idx % geom.nf, idx // geom.nf
    return PermeabilityField(np.where(((i // period) + (j // period)) % 2 == 0, 1.0, eta))


def loguniform_field(geom: GridGeometry, contrast: float, rng: np.random.Generator) -> PermeabilityField:
    """Cellwise log-uniform field in ``[1, contrast]``."""
    return PermeabilityField(contrast ** rng.uniform(0.0, 1.0, geom.n_cells))


def feature_list(items: Sequence[dict]) -> tuple[Feature, ...]:
    """Parse features from plain dictionaries (config files)."""
    out: list[Feature] = []
    for it in items:
        kind = it.get("kind")
        if kind == "rect":
            out.append(Rectangle(float(it["x0"]), float(it["x1"]), float(it["y0"]), float(it["y1"]), float(it["eta"])))
        elif kind == "channel":
            pts = tuple((float(a), float(b)) for a, b in it["points"])
            out.append(Channel(pts, float(it["width"]), float(it["eta"])))
        else:
            raise FieldError(f"unknown feature kind {kind!r}")
    return tuple(out)
