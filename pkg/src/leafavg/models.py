"""Sparse additive generative models on the unit cube and the Boolean cube.

A model is a sum of univariate component functions, one per coordinate,
plus homoskedastic Gaussian noise.  The component catalogue is fixed to
{zero, linear, square}; coordinates with a zero component are noise
coordinates and the remaining ones form the model's support.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Literal

import numpy as np

from ._rng import make_rng

if TYPE_CHECKING:  # pragma: no cover
    from .geometry import ContinuousCell

__all__ = [
    "ComponentFunction",
    "CovariateDistribution",
    "AdditiveModel",
    "Dataset",
    "zero",
    "linear",
    "square",
    "uniform_cube",
    "boolean_product",
    "sample_dataset",
    "eval_f",
    "derivative_lower_bounds",
]

ComponentKind = Literal["zero", "linear", "square"]
DistributionKind = Literal["uniform_cube", "boolean_product"]


@dataclass(frozen=True, slots=True)
class ComponentFunction:
    """One univariate term of an additive model.

    ``zero`` ignores its input, ``linear`` maps t to coefficient * t and
    ``square`` maps t to coefficient * t**2.
    """

    kind: ComponentKind
    coefficient: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("zero", "linear", "square"):
            raise ValueError(f"unknown component kind {self.kind!r}")
        if self.kind == "zero" and self.coefficient != 0.0:
            raise ValueError("zero component must have coefficient 0")
        if not np.isfinite(self.coefficient):
            raise ValueError("component coefficient must be finite")

    @property
    def is_active(self) -> bool:
        return self.kind != "zero" and self.coefficient != 0.0

    def __call__(self, t: float | np.ndarray) -> float | np.ndarray:
        if self.kind == "zero":
            return np.zeros_like(t, dtype=float) if isinstance(t, np.ndarray) else 0.0
        if self.kind == "linear":
            return self.coefficient * t
        return self.coefficient * t * t


def zero() -> ComponentFunction:
    return ComponentFunction("zero", 0.0)


def linear(coefficient: float) -> ComponentFunction:
    return ComponentFunction("linear", float(coefficient))


def square(coefficient: float) -> ComponentFunction:
    return ComponentFunction("square", float(coefficient))


@dataclass(frozen=True, slots=True)
class CovariateDistribution:
    """Covariate law: Uniform[0,1]^d or a product of Bernoulli(p_j).

    Bernoulli success probabilities must lie in (0, 1/2]; this keeps each
    coordinate's minority mass equal to p_j, which the Boolean risk bounds
    rely on.
    """

    kind: DistributionKind
    dimension: int
    bernoulli_p: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.dimension < 1:
            raise ValueError("dimension must be a positive integer")
        if self.kind == "uniform_cube":
            if self.bernoulli_p is not None:
                raise ValueError("uniform_cube takes no Bernoulli parameters")
        elif self.kind == "boolean_product":
            p = self.bernoulli_p
            if p is None or len(p) != self.dimension:
                raise ValueError("boolean_product needs one p_j per coordinate")
            for j, pj in enumerate(p):
                if not 0.0 < pj <= 0.5:
                    raise ValueError(
                        f"bernoulli_p[{j}] = {pj} outside the allowed range (0, 1/2]"
                    )
        else:
            raise ValueError(f"unknown distribution kind {self.kind!r}")

    @property
    def is_boolean(self) -> bool:
        return self.kind == "boolean_product"


def uniform_cube(dimension: int) -> CovariateDistribution:
    return CovariateDistribution("uniform_cube", dimension)


def boolean_product(p, dimension: int | None = None) -> CovariateDistribution:
    """Product Bernoulli law; ``p`` is a scalar shared by all coordinates
    (``dimension`` required) or a sequence with one entry per coordinate."""
    if np.isscalar(p):
        if dimension is None:
            raise ValueError("scalar p needs an explicit dimension")
        probs = (float(p),) * dimension
    else:
        probs = tuple(float(v) for v in p)
        if dimension is not None and dimension != len(probs):
            raise ValueError("dimension does not match the length of p")
        dimension = len(probs)
    return CovariateDistribution("boolean_product", dimension, probs)


@dataclass(frozen=True)
class AdditiveModel:
    """f(x) = sum_j phi_j(x_j) observed under Gaussian noise.

    ``components`` has exactly one entry per coordinate of ``distribution``.
    """

    components: tuple[ComponentFunction, ...]
    distribution: CovariateDistribution
    noise_variance: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "components", tuple(self.components))
        if len(self.components) != self.distribution.dimension:
            raise ValueError(
                f"got {len(self.components)} components for "
                f"dimension {self.distribution.dimension}"
            )
        if not (np.isfinite(self.noise_variance) and self.noise_variance >= 0.0):
            raise ValueError("noise_variance must be finite and >= 0")

    @property
    def dimension(self) -> int:
        return self.distribution.dimension

    @property
    def support(self) -> tuple[int, ...]:
        """Indices of coordinates whose component is not identically zero."""
        return tuple(j for j, c in enumerate(self.components) if c.is_active)

    @property
    def sparsity(self) -> int:
        return len(self.support)

    @property
    def coefficients(self) -> np.ndarray:
        return np.array([c.coefficient for c in self.components], dtype=float)


@dataclass(frozen=True)
class Dataset:
    """Covariate matrix of shape (n, d) with the response vector."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self) -> None:
        if self.x.ndim != 2 or self.y.ndim != 1 or self.x.shape[0] != self.y.shape[0]:
            raise ValueError("x must be (n, d) and y must be (n,) with matching n")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def dimension(self) -> int:
        return self.x.shape[1]


def sample_covariates(model: AdditiveModel, n: int, seed: int) -> np.ndarray:
    """Draw n covariate vectors from the model's distribution (no noise)."""
    if n < 1:
        raise ValueError("n must be a positive integer")
    rng = make_rng(seed)
    dist = model.distribution
    if dist.is_boolean:
        p = np.array(dist.bernoulli_p, dtype=float)
        return (rng.random((n, dist.dimension)) < p).astype(float)
    return rng.random((n, dist.dimension))


def sample_dataset(model: AdditiveModel, n: int, seed: int) -> Dataset:
    """Draw an i.i.d. sample (x_i, y_i) with y = f(x) + Gaussian noise.

    Identical (model, n, seed) triples yield identical datasets; the
    covariates and the noise come from the same derived stream, covariates
    first.
    """
    if n < 1:
        raise ValueError("n must be a positive integer")
    rng = make_rng(seed)
    dist = model.distribution
    if dist.is_boolean:
        p = np.array(dist.bernoulli_p, dtype=float)
        x = (rng.random((n, dist.dimension)) < p).astype(float)
    else:
        x = rng.random((n, dist.dimension))
    y = eval_f(model, x)
    if model.noise_variance > 0.0:
        y = y + rng.normal(0.0, np.sqrt(model.noise_variance), size=n)
    return Dataset(x, y)


def _check_domain(model: AdditiveModel, x: np.ndarray) -> None:
    if model.distribution.is_boolean:
        if not np.all((x == 0.0) | (x == 1.0)):
            raise ValueError("point outside the Boolean cube {0,1}^d")
    else:
        if not (np.all(x >= 0.0) and np.all(x <= 1.0)):
            raise ValueError("point outside the unit cube [0,1]^d")


def eval_f(model: AdditiveModel, x) -> float | np.ndarray:
    """Noiseless regression function at one point (d,) or a batch (n, d)."""
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != model.dimension:
        raise ValueError(
            f"point has dimension {arr.shape[-1]}, model has {model.dimension}"
        )
    _check_domain(model, arr)
    total = np.zeros(arr.shape[0], dtype=float)
    for j, comp in enumerate(model.components):
        if comp.kind == "linear":
            total += comp.coefficient * arr[:, j]
        elif comp.kind == "square":
            col = arr[:, j]
            total += comp.coefficient * col * col
    return float(total[0]) if single else total


def derivative_lower_bounds(model: AdditiveModel, cell: "ContinuousCell") -> np.ndarray:
    """Per-coordinate lower bound on |phi_j'| over a continuous cell.

    Linear components have constant slope, so the bound is |coefficient|.
    A square component has derivative 2*coefficient*t, whose modulus on
    [a, b] is minimized at the endpoint closest to zero, or vanishes when
    the interval contains zero.  Only defined on the continuous cube;
    Boolean models have no derivatives to bound.
    """
    if model.distribution.is_boolean:
        raise TypeError("derivative bounds are undefined for Boolean models")
    lower = np.asarray(cell.lower, dtype=float)
    upper = np.asarray(cell.upper, dtype=float)
    if lower.shape != (model.dimension,) or upper.shape != (model.dimension,):
        raise ValueError("cell dimension does not match the model")
    out = np.zeros(model.dimension, dtype=float)
    for j, comp in enumerate(model.components):
        if comp.kind == "linear":
            out[j] = abs(comp.coefficient)
        elif comp.kind == "square":
            a, b = lower[j], upper[j]
            if a <= 0.0 <= b:
                out[j] = 0.0
            else:
                out[j] = 2.0 * abs(comp.coefficient) * min(abs(a), abs(b))
    return out
