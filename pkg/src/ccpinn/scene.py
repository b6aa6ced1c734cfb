"""Grids, phantoms, rasterization and frequency-dependent contrast."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

EPS0 = 8.8541878128e-12  # F/m
C0 = 299792458.0  # m/s

SCENE_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class Grid:
    """Uniform square grid over [-R, R]^2 with ``n`` cells per side.

    Fields on the grid are stored as ``(n, n)`` arrays indexed ``[i, j]`` with
    ``i`` running along x and ``j`` along y.  Flattened cell index is
    ``i * n + j`` (C order).
    """

    half_width: float
    n: int

    def __post_init__(self):
        if not (self.half_width > 0) or not math.isfinite(self.half_width):
            raise ValueError(f"half_width must be positive, got {self.half_width}")
        if int(self.n) != self.n or self.n < 2:
            raise ValueError(f"n must be an integer >= 2, got {self.n}")

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / self.n

    @property
    def cell_area(self) -> float:
        return self.spacing**2

    @property
    def n_cells(self) -> int:
        return self.n * self.n

    @property
    def centers(self) -> np.ndarray:
        """1D cell-center coordinates, shared by x and y."""
        return -self.half_width + (np.arange(self.n) + 0.5) * self.spacing

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        c = self.centers
        return np.meshgrid(c, c, indexing="ij")

    def points(self) -> np.ndarray:
        """Cell centers as an ``(n*n, 2)`` array in flattened order."""
        x, y = self.mesh()
        return np.stack([x.ravel(), y.ravel()], axis=1)

    def normalized_points(self, reference_half_width: float | None = None) -> np.ndarray:
        r = self.half_width if reference_half_width is None else reference_half_width
        return self.points() / r


def build_grid(half_width: float, n: int) -> Grid:
    if int(n) != n:
        raise ValueError(f"n must be an integer >= 2, got {n}")
    return Grid(float(half_width), int(n))


@dataclass(frozen=True)
class Disk:
    center: tuple[float, float]
    radius: float
    eps_r: float = 1.0
    sigma: float = 0.0
    kind: str = field(default="disk", init=False)

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("disk radius must be positive")
        _check_material(self.eps_r, self.sigma)

    def contains(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        cx, cy = self.center
        return (x - cx) ** 2 + (y - cy) ** 2 <= self.radius**2

    @property
    def area(self) -> float:
        return math.pi * self.radius**2


@dataclass(frozen=True)
class Annulus:
    center: tuple[float, float]
    outer_radius: float
    inner_radius: float
    eps_r: float = 1.0
    sigma: float = 0.0
    kind: str = field(default="annulus", init=False)

    def __post_init__(self):
        if not (self.outer_radius > self.inner_radius > 0):
            raise ValueError("annulus needs outer > inner > 0")
        _check_material(self.eps_r, self.sigma)

    def contains(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        cx, cy = self.center
        d2 = (x - cx) ** 2 + (y - cy) ** 2
        return (d2 <= self.outer_radius**2) & (d2 >= self.inner_radius**2)

    @property
    def area(self) -> float:
        return math.pi * (self.outer_radius**2 - self.inner_radius**2)


Shape = Union[Disk, Annulus]


def _check_material(eps_r: float, sigma: float) -> None:
    if not eps_r >= 1.0:
        raise ValueError(f"eps_r must be >= 1, got {eps_r}")
    if not sigma >= 0.0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")


@dataclass(frozen=True)
class Phantom:
    """Ordered shapes; later shapes overwrite earlier ones where they overlap."""

    shapes: tuple[Shape, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "shapes", tuple(self.shapes))

    def to_dict(self) -> dict:
        out = []
        for s in self.shapes:
            rec = {"kind": s.kind, "center": list(s.center), "eps_r": s.eps_r, "sigma": s.sigma}
            if isinstance(s, Disk):
                rec["radius"] = s.radius
            else:
                rec["outer_radius"] = s.outer_radius
                rec["inner_radius"] = s.inner_radius
            out.append(rec)
        return {"schema_version": SCENE_SCHEMA_VERSION, "shapes": out}

    @classmethod
    def from_dict(cls, data: dict) -> "Phantom":
        version = data.get("schema_version", SCENE_SCHEMA_VERSION)
        if version != SCENE_SCHEMA_VERSION:
            raise ValueError(f"unsupported scene schema version {version}")
        shapes: list[Shape] = []
        for k, rec in enumerate(data.get("shapes", [])):
            kind = rec.get("kind")
            center = tuple(float(c) for c in rec["center"])
            eps_r = float(rec.get("eps_r", 1.0))
            sigma = float(rec.get("sigma", 0.0))
            if kind == "disk":
                shapes.append(Disk(center, float(rec["radius"]), eps_r, sigma))
            elif kind == "annulus":
                shapes.append(
                    Annulus(center, float(rec["outer_radius"]), float(rec["inner_radius"]), eps_r, sigma)
                )
            else:
                raise ValueError(f"shape {k}: unknown kind {kind!r}")
        return cls(tuple(shapes))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path: str | Path) -> "Phantom":
        return cls.from_dict(json.loads(Path(path).read_text()))


def austria_phantom(
    eps_r: float | Sequence[float] = 4.0, sigma: float | Sequence[float] = 0.0
) -> Phantom:
    """The two-disk plus ring "Austria" benchmark.

    Shape order is (lower disk, upper disk, ring).  ``eps_r`` and ``sigma``
    may be scalars or 3-sequences in that order for per-shape values.
    """
    eps = _per_shape(eps_r)
    sig = _per_shape(sigma)
    return Phantom(
        (
            Disk((0.3, -0.15), 0.1, eps[0], sig[0]),
            Disk((0.3, 0.15), 0.1, eps[1], sig[1]),
            Annulus((-0.1, 0.0), 0.3, 0.15, eps[2], sig[2]),
        )
    )


def _per_shape(value) -> list[float]:
    if np.ndim(value) == 0:
        return [float(value)] * 3
    vals = [float(v) for v in value]
    if len(vals) != 3:
        raise ValueError("per-shape parameters need exactly 3 values")
    return vals


@dataclass(frozen=True)
class MediumMaps:
    eps_r: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        if self.eps_r.shape != self.sigma.shape:
            raise ValueError("eps_r and sigma shapes differ")


def rasterize(phantom: Phantom, grid: Grid) -> MediumMaps:
    """Center-point rasterization onto ``grid``."""
    x, y = grid.mesh()
    eps = np.ones((grid.n, grid.n))
    sig = np.zeros((grid.n, grid.n))
    for s in phantom.shapes:
        inside = s.contains(x, y)
        eps[inside] = s.eps_r
        sig[inside] = s.sigma
    return MediumMaps(eps, sig)


def contrast_from_params(eps_r, sigma, freq: float):
    """chi = (eps_r - 1) - j sigma / (omega eps0), e^{jwt} convention."""
    if not freq > 0:
        raise ValueError(f"frequency must be positive, got {freq}")
    return (np.asarray(eps_r) - 1.0) - 1j * np.asarray(sigma) / (2.0 * math.pi * freq * EPS0)


def contrast_map(medium: MediumMaps, freq: float) -> np.ndarray:
    return contrast_from_params(medium.eps_r, medium.sigma, freq)


def contrast_maps(medium: MediumMaps, freqs: Iterable[float]) -> list[np.ndarray]:
    return [contrast_map(medium, f) for f in freqs]


def wavenumber(freq: float) -> float:
    if not freq > 0:
        raise ValueError(f"frequency must be positive, got {freq}")
    return 2.0 * math.pi * freq / C0
