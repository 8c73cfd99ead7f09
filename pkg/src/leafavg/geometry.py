"""Axis-aligned cells and partitions of the unit cube / Boolean cube.

Cells are products of per-coordinate intervals (continuous) or fixed-bit
constraints (Boolean).  Partitions collect cells that tile the support;
they carry the measure, permissibility and conditional-moment machinery
that the risk decomposition is built on.

Continuous cells follow a half-open convention when points are located:
a cell owns [a_j, b_j) on every axis, except that an upper limit of 1 is
closed so the cube's boundary belongs to the final cell.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product as _iterproduct
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

from .models import AdditiveModel, CovariateDistribution

__all__ = [
    "ContinuousCell",
    "BooleanCell",
    "Cell",
    "CellMoments",
    "Partition",
    "cell_measure",
    "conditional_moments",
    "is_permissible",
    "first_non_permissible",
    "grid_partition",
    "oracle_tessellation",
    "locate",
    "locate_many",
    "partition_to_text",
    "partition_from_text",
]

# Total-volume mismatch larger than this fails partition validation.
_COVERAGE_TOL = 1e-9
# Pairwise disjointness is checked exhaustively only below this cell count.
_DISJOINT_CHECK_LIMIT = 512


@dataclass(frozen=True, slots=True)
class ContinuousCell:
    """Axis-aligned box prod_j [lower_j, upper_j] inside [0,1]^d."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "lower", tuple(float(v) for v in self.lower))
        object.__setattr__(self, "upper", tuple(float(v) for v in self.upper))
        if len(self.lower) != len(self.upper) or not self.lower:
            raise ValueError("lower and upper must be equal-length, nonempty")
        for j, (a, b) in enumerate(zip(self.lower, self.upper)):
            if not (0.0 <= a <= b <= 1.0):
                raise ValueError(
                    f"axis {j}: invalid interval [{a}, {b}] (need 0 <= a <= b <= 1)"
                )

    @property
    def dimension(self) -> int:
        return len(self.lower)

    @property
    def side_lengths(self) -> np.ndarray:
        return np.array(self.upper, dtype=float) - np.array(self.lower, dtype=float)

    def volume(self) -> float:
        return float(np.prod(self.side_lengths))

    def contains(self, x: Sequence[float]) -> bool:
        """Membership under the half-open convention (upper limit 1 closed)."""
        for a, b, v in zip(self.lower, self.upper, x):
            if v < a:
                return False
            if v >= b and not (b == 1.0 and v == 1.0):
                return False
        return True


@dataclass(frozen=True, slots=True)
class BooleanCell:
    """Subcube of {0,1}^d given by fixing a subset of coordinates.

    ``fixed`` is a sorted tuple of (coordinate, bit) pairs; the remaining
    coordinates are free.
    """

    dimension: int
    fixed: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        pairs = tuple(sorted((int(j), int(v)) for j, v in self.fixed))
        object.__setattr__(self, "fixed", pairs)
        if self.dimension < 1:
            raise ValueError("dimension must be positive")
        seen = set()
        for j, v in pairs:
            if not 0 <= j < self.dimension:
                raise ValueError(f"fixed coordinate {j} out of range")
            if v not in (0, 1):
                raise ValueError(f"fixed value for coordinate {j} must be 0 or 1")
            if j in seen:
                raise ValueError(f"coordinate {j} fixed twice")
            seen.add(j)

    @property
    def fixed_map(self) -> dict[int, int]:
        return dict(self.fixed)

    def contains(self, x: Sequence[float]) -> bool:
        return all(x[j] == v for j, v in self.fixed)


Cell = Union[ContinuousCell, BooleanCell]


@dataclass(frozen=True, slots=True)
class CellMoments:
    """Conditional mean and variance of f given membership in a cell."""

    mean: float
    variance: float


@dataclass(frozen=True)
class _GridInfo:
    """Fast-location metadata for partitions built from per-axis edges."""

    support: tuple[int, ...]
    edges: tuple[tuple[float, ...], ...]  # one edge vector per support axis

    @property
    def slab_counts(self) -> tuple[int, ...]:
        return tuple(len(e) - 1 for e in self.edges)


class Partition:
    """A finite family of cells tiling the support.

    Validation checks that all cells share one dimension and variant, that
    total measure accounts for the whole support (continuous: Lebesgue
    volume within 1e-9 of 1; Boolean: exact point count 2^d via integer
    arithmetic) and, for small partitions, that cells are pairwise
    disjoint.
    """

    def __init__(
        self,
        cells: Iterable[Cell],
        *,
        validate: bool = True,
        _grid: _GridInfo | None = None,
    ) -> None:
        self.cells: tuple[Cell, ...] = tuple(cells)
        self._grid = _grid
        if not self.cells:
            raise ValueError("a partition needs at least one cell")
        first = self.cells[0]
        self.is_boolean = isinstance(first, BooleanCell)
        self.dimension = first.dimension
        if validate:
            self._validate()

    def __len__(self) -> int:
        return len(self.cells)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Partition):
            return NotImplemented
        return self.cells == other.cells

    def __repr__(self) -> str:
        kind = "boolean" if self.is_boolean else "continuous"
        return f"Partition({kind}, d={self.dimension}, cells={len(self.cells)})"

    def _validate(self) -> None:
        want = BooleanCell if self.is_boolean else ContinuousCell
        for cell in self.cells:
            if not isinstance(cell, want):
                raise ValueError("cells mix continuous and Boolean variants")
            if cell.dimension != self.dimension:
                raise ValueError("cells disagree on dimension")
        if self.is_boolean:
            covered = sum(1 << (self.dimension - len(c.fixed)) for c in self.cells)
            if covered != 1 << self.dimension:
                raise ValueError(
                    f"Boolean cells cover {covered} of {1 << self.dimension} points"
                )
        else:
            total = math.fsum(c.volume() for c in self.cells)
            if abs(total - 1.0) > _COVERAGE_TOL:
                raise ValueError(f"cell volumes sum to {total}, expected 1")
        if len(self.cells) <= _DISJOINT_CHECK_LIMIT:
            self._check_disjoint()

    def _check_disjoint(self) -> None:
        cells = self.cells
        for i in range(len(cells)):
            for k in range(i + 1, len(cells)):
                if self.is_boolean:
                    a = cells[i].fixed_map
                    b = cells[k].fixed_map
                    if all(a[j] == b[j] for j in a.keys() & b.keys()):
                        raise ValueError(f"cells {i} and {k} overlap")
                else:
                    a, b = cells[i], cells[k]
                    separated = any(
                        a.upper[j] <= b.lower[j] or b.upper[j] <= a.lower[j]
                        for j in range(self.dimension)
                    )
                    if not separated and a.volume() > 0.0 and b.volume() > 0.0:
                        raise ValueError(f"cells {i} and {k} have overlapping interiors")


def _require_matching_variant(cell: Cell, dist: CovariateDistribution) -> None:
    if dist.is_boolean and not isinstance(cell, BooleanCell):
        raise TypeError("Boolean distribution requires Boolean cells")
    if not dist.is_boolean and not isinstance(cell, ContinuousCell):
        raise TypeError("continuous distribution requires continuous cells")
    if cell.dimension != dist.dimension:
        raise ValueError(
            f"cell dimension {cell.dimension} != distribution dimension {dist.dimension}"
        )


def cell_measure(cell: Cell, dist: CovariateDistribution) -> float:
    """Probability mass of the cell under the covariate distribution."""
    _require_matching_variant(cell, dist)
    if isinstance(cell, BooleanCell):
        p = dist.bernoulli_p
        out = 1.0
        for j, v in cell.fixed:
            out *= p[j] if v == 1 else 1.0 - p[j]
        return out
    return cell.volume()


def is_permissible(partition: Partition, dist: CovariateDistribution, n: int) -> bool:
    """True when every cell has mass at least 1/n (no tolerance slack)."""
    return first_non_permissible(partition, dist, n) is None


def first_non_permissible(
    partition: Partition, dist: CovariateDistribution, n: int
) -> int | None:
    """Index of the first cell with mass below 1/n, or None."""
    if n < 1:
        raise ValueError("n must be a positive integer")
    threshold = 1.0 / n
    for i, cell in enumerate(partition.cells):
        if cell_measure(cell, dist) < threshold:
            return i
    return None


def _uniform_interval_moments(comp, a: float, b: float) -> tuple[float, float]:
    """Mean and variance of phi(t) for t uniform on [a, b] (b > a)."""
    length = b - a
    mid = 0.5 * (a + b)
    beta = comp.coefficient
    if comp.kind == "zero":
        return 0.0, 0.0
    if comp.kind == "linear":
        return beta * mid, beta * beta * length * length / 12.0
    # square: write t = mid + u with u centered uniform of length l; then
    # E t^2 = mid^2 + l^2/12 and Var t^2 = mid^2 l^2 / 3 + l^4 / 180.
    mean = beta * (mid * mid + length * length / 12.0)
    var = beta * beta * (
        mid * mid * length * length / 3.0 + length ** 4 / 180.0
    )
    return mean, var


def conditional_moments(cell: Cell, model: AdditiveModel) -> CellMoments:
    """Exact conditional mean and variance of f(x) given x in the cell.

    Additivity and coordinate independence reduce the computation to
    per-coordinate moments, all of which have closed forms for the
    {zero, linear, square} catalogue: uniform intervals use polynomial
    moments, and on {0,1} a square term coincides with a linear one
    because t^2 = t for t in {0,1}.
    """
    dist = model.distribution
    _require_matching_variant(cell, dist)
    mean = 0.0
    var = 0.0
    if isinstance(cell, BooleanCell):
        fixed = cell.fixed_map
        for j, comp in enumerate(model.components):
            if comp.kind == "zero":
                continue
            beta = comp.coefficient
            if j in fixed:
                mean += beta * fixed[j]
            else:
                pj = dist.bernoulli_p[j]
                mean += beta * pj
                var += beta * beta * pj * (1.0 - pj)
        return CellMoments(mean, var)
    for j, comp in enumerate(model.components):
        a, b = cell.lower[j], cell.upper[j]
        if b <= a:
            raise ValueError(f"zero-measure cell: axis {j} has interval [{a}, {b}]")
        m, v = _uniform_interval_moments(comp, a, b)
        mean += m
        var += v
    return CellMoments(mean, var)


def _slab_count(side_target: float) -> int:
    """ceil(1 / side_target), robust to float noise in the division."""
    if not (0.0 < side_target <= 1.0):
        raise ValueError("side target must lie in (0, 1]")
    raw = 1.0 / side_target
    nearest = round(raw)
    if abs(raw - nearest) < 1e-9:
        return max(int(nearest), 1)
    return max(int(math.ceil(raw)), 1)


def grid_partition(
    axis_edges: Mapping[int, Sequence[float]], dimension: int
) -> Partition:
    """Partition of [0,1]^d by per-axis cut points.

    ``axis_edges`` maps a coordinate to its sorted edge vector, which must
    start at 0 and end at 1; unmentioned coordinates stay whole.  Cells are
    enumerated lexicographically over the mentioned axes in increasing
    coordinate order, which fixes the cell indexing used by locate.
    """
    if dimension < 1:
        raise ValueError("dimension must be positive")
    support = tuple(sorted(axis_edges))
    edges: list[tuple[float, ...]] = []
    for j in support:
        if not 0 <= j < dimension:
            raise ValueError(f"axis {j} out of range for dimension {dimension}")
        e = tuple(float(v) for v in axis_edges[j])
        if len(e) < 2 or e[0] != 0.0 or e[-1] != 1.0 or any(
            e[i] >= e[i + 1] for i in range(len(e) - 1)
        ):
            raise ValueError(f"axis {j}: edges must increase strictly from 0 to 1")
        edges.append(e)
    cells = []
    for combo in _iterproduct(*(range(len(e) - 1) for e in edges)):
        lower = [0.0] * dimension
        upper = [1.0] * dimension
        for axis_pos, slab in enumerate(combo):
            j = support[axis_pos]
            lower[j] = edges[axis_pos][slab]
            upper[j] = edges[axis_pos][slab + 1]
        cells.append(ContinuousCell(tuple(lower), tuple(upper)))
    info = _GridInfo(support=support, edges=tuple(edges))
    # Grids are disjoint and covering by construction; skip O(k^2) checks.
    return Partition(cells, validate=False, _grid=info)


def oracle_tessellation(
    support: Iterable[int], side_target: float, dimension: int
) -> Partition:
    """Equal-width tessellation of the support coordinates.

    Each support coordinate is cut into ceil(1/side_target) equal slabs;
    the other coordinates are left whole, so cells are full-height boxes
    whose support-coordinate sides are at most ``side_target``.
    """
    support = tuple(sorted(set(int(j) for j in support)))
    if not support:
        raise ValueError("support must name at least one coordinate")
    k = _slab_count(side_target)
    edges = np.linspace(0.0, 1.0, k + 1)
    edges[0], edges[-1] = 0.0, 1.0
    return grid_partition({j: edges for j in support}, dimension)


def locate(partition: Partition, x: Sequence[float]) -> int:
    """Index of the unique cell containing x (half-open convention)."""
    arr = np.asarray(x, dtype=float)
    if arr.shape != (partition.dimension,):
        raise ValueError("point dimension does not match the partition")
    if partition._grid is not None:
        return int(locate_many(partition, arr[None, :])[0])
    for i, cell in enumerate(partition.cells):
        if cell.contains(arr):
            return i
    raise ValueError(f"point {arr.tolist()} is not covered by the partition")


def locate_many(partition: Partition, x: np.ndarray) -> np.ndarray:
    """Vectorized locate for a batch of shape (m, d)."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != partition.dimension:
        raise ValueError("batch must have shape (m, d)")
    grid = partition._grid
    if grid is None:
        return np.array([locate(partition, row) for row in arr], dtype=np.intp)
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ValueError("point is outside the unit cube")
    idx = np.zeros(arr.shape[0], dtype=np.intp)
    for axis_pos, j in enumerate(grid.support):
        edges = np.asarray(grid.edges[axis_pos])
        k = len(edges) - 1
        # side="right" implements the half-open lower-closed slabs; the
        # clip folds x == 1 into the final slab (closed at 1).
        bins = np.searchsorted(edges, arr[:, j], side="right") - 1
        bins = np.minimum(bins, k - 1)
        idx = idx * k + bins
    return idx


def partition_to_text(partition: Partition) -> str:
    """Plain-text serialization, one line per cell.

    Continuous cells are ``a_1,b_1;...;a_d,b_d`` with round-trip float
    repr; Boolean cells are ``j=v`` pairs joined by ``;`` (``-`` when no
    coordinate is fixed).  The header records the variant, dimension and
    cell count.
    """
    kind = "boolean" if partition.is_boolean else "continuous"
    lines = [f"{kind} d={partition.dimension} cells={len(partition)}"]
    for cell in partition.cells:
        if isinstance(cell, BooleanCell):
            if cell.fixed:
                lines.append(";".join(f"{j}={v}" for j, v in cell.fixed))
            else:
                lines.append("-")
        else:
            lines.append(
                ";".join(
                    f"{a!r},{b!r}" for a, b in zip(cell.lower, cell.upper)
                )
            )
    return "\n".join(lines) + "\n"


def partition_from_text(text: str) -> Partition:
    """Inverse of :func:`partition_to_text`."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty partition text")
    header = lines[0].split()
    if len(header) != 3 or not header[1].startswith("d=") or not header[2].startswith(
        "cells="
    ):
        raise ValueError(f"malformed partition header: {lines[0]!r}")
    kind = header[0]
    dimension = int(header[1][2:])
    count = int(header[2][6:])
    body = lines[1:]
    if len(body) != count:
        raise ValueError(f"expected {count} cell lines, found {len(body)}")
    cells: list[Cell] = []
    if kind == "boolean":
        for ln in body:
            if ln.strip() == "-":
                cells.append(BooleanCell(dimension, ()))
                continue
            pairs = []
            for chunk in ln.split(";"):
                j, v = chunk.split("=")
                pairs.append((int(j), int(v)))
            cells.append(BooleanCell(dimension, tuple(pairs)))
    elif kind == "continuous":
        for ln in body:
            lower, upper = [], []
            for chunk in ln.split(";"):
                a, b = chunk.split(",")
                lower.append(float(a))
                upper.append(float(b))
            if len(lower) != dimension:
                raise ValueError("cell line does not match the header dimension")
            cells.append(ContinuousCell(tuple(lower), tuple(upper)))
    else:
        raise ValueError(f"unknown partition variant {kind!r}")
    return Partition(cells)
