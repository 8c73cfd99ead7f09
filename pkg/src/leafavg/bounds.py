"""Risk decompositions and information-theoretic risk bounds.

Two layers live here.  The first is exact: given a model, a partition and
a sample size, the expected risk of the leaf-averaging estimator is
sandwiched by explicit bias/variance/boundary terms computed from cell
moments.  The second is asymptotic: minimax-style lower bounds obtained by
minimizing distortion-plus-codebook-cost objectives of the form
(1/2) * (D + sigma^2 * 2^{R(D)} / n) over the distortion level D, with
R(D) a rate bound in bits, plus the matching constructive upper bound for
sparse additive models.

All rates and entropies are measured in bits (base-2 logarithms); the
inclusion threshold inside the Boolean rate uses a natural logarithm
because it comes from inverting a logistic expression.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .geometry import Partition, cell_measure, conditional_moments, first_non_permissible
from .models import AdditiveModel

__all__ = [
    "DecompositionReport",
    "BoundResult",
    "SparseUpperBound",
    "decompose_risk",
    "binary_entropy",
    "g_beta",
    "g_beta_inverse",
    "m_beta_pi",
    "m_inverse",
    "boolean_rate",
    "univariate_rate_bound",
    "minimize_rd_objective",
    "linear_lower_bound_cube",
    "additive_lower_bound",
    "boolean_lower_bound",
    "sparse_additive_upper_bound",
]

_LOG2 = math.log(2.0)
_TWO_PI_E = 2.0 * math.pi * math.e


# ---------------------------------------------------------------------------
# Exact risk decomposition over a fixed partition.
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class DecompositionReport:
    """Bias/variance/boundary accounting of the expected risk.

    ``lower_bound``/``upper_bound`` are the simplified sandwich valid for
    permissible partitions; ``tight_lower``/``tight_upper`` are the sharper
    forms valid for any partition.  ``boundary_term`` is the empty-cell
    penalty  E = sum_C mean_C^2 (1 - nu_C)^n nu_C  and ``tail_term`` is the
    correction  E2 = (1/n) sum_C (var_C + sigma^2)(1 - nu_C)^n.
    """

    cell_count: int
    sample_size: int
    noise_variance: float
    bias_term: float
    variance_lower: float
    variance_upper: float
    boundary_term: float
    tail_term: float
    lower_bound: float
    upper_bound: float
    tight_lower: float
    tight_upper: float


def _vanish_prob(mass: float, n: int) -> float:
    """(1 - mass)^n evaluated stably for small masses and large n."""
    if mass >= 1.0:
        return 0.0
    return math.exp(n * math.log1p(-mass))


def decompose_risk(
    partition: Partition,
    model: AdditiveModel,
    n: int,
    *,
    require_permissible: bool = True,
) -> DecompositionReport:
    """Exact two-sided accounting of the leaf-averaging estimator's risk.

    The simplified sandwich assumes every cell holds mass at least 1/n;
    with ``require_permissible`` (the default) a violation raises an error
    naming the first offending cell.  The tight forms are computed from
    the same moments and remain valid without the mass condition.
    """
    if n < 1:
        raise ValueError("n must be a positive integer")
    if require_permissible:
        bad = first_non_permissible(partition, model.distribution, n)
        if bad is not None:
            mass = cell_measure(partition.cells[bad], model.distribution)
            raise ValueError(
                f"partition is not permissible at n={n}: cell {bad} has "
                f"measure {mass} < 1/n"
            )
    sigma2 = model.noise_variance
    k = len(partition)
    bias = 0.0
    var_over_n = 0.0
    boundary = 0.0
    tail = 0.0
    for cell in partition.cells:
        mass = cell_measure(cell, model.distribution)
        moments = conditional_moments(cell, model)
        vanish = _vanish_prob(mass, n)
        bias += moments.variance * mass
        var_over_n += moments.variance / n
        boundary += moments.mean * moments.mean * vanish * mass
        tail += (moments.variance + sigma2) * vanish / n
    variance_lower = k * sigma2 / (2.0 * n)
    variance_upper = 6.0 * k * sigma2 / n
    return DecompositionReport(
        cell_count=k,
        sample_size=n,
        noise_variance=sigma2,
        bias_term=bias,
        variance_lower=variance_lower,
        variance_upper=variance_upper,
        boundary_term=boundary,
        tail_term=tail,
        lower_bound=bias + variance_lower,
        upper_bound=7.0 * bias + variance_upper + boundary,
        tight_lower=bias + var_over_n + k * sigma2 / n + boundary - tail,
        tight_upper=bias + 6.0 * var_over_n + variance_upper + boundary,
    )


# ---------------------------------------------------------------------------
# Scalar building blocks.
# ---------------------------------------------------------------------------


def binary_entropy(p: float) -> float:
    """Entropy of a Bernoulli(p) in bits; 0 at p in {0, 1}."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    if p == 0.0 or p == 1.0:
        return 0.0
    q = 1.0 - p
    return -(p * math.log2(p) + q * math.log2(q))


def _as_nonnegative_array(values: Sequence[float], name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"{name} must be a nonempty vector")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0.0):
        raise ValueError(f"{name} must be finite and nonnegative")
    return arr


def g_beta(betas: Sequence[float], alpha: float) -> float:
    """Largest sum of beta_j^2 l_j^2 over sides l_j in [0,1] with l_j <= alpha/beta_j.

    Equals alpha^2 |{j : beta_j >= alpha}| + sum_{beta_j < alpha} beta_j^2;
    strictly increasing on [0, max_j beta_j].
    """
    b = _as_nonnegative_array(betas, "betas")
    bmax = float(b.max())
    if not 0.0 <= alpha <= bmax:
        raise ValueError(f"alpha must lie in [0, {bmax}]")
    high = b >= alpha
    return float(alpha * alpha * np.count_nonzero(high) + np.sum(b[~high] ** 2))


def g_beta_inverse(betas: Sequence[float], target: float) -> float:
    """Inverse of :func:`g_beta` by bisection (1e-12 relative tolerance).

    Targets above g(max beta) = ||beta||^2 return +inf: no finite
    threshold produces that value, and downstream products over
    {j : beta_j >= alpha} then run over the empty set.
    """
    b = _as_nonnegative_array(betas, "betas")
    if target < 0.0:
        raise ValueError("target must be nonnegative")
    if target == 0.0:
        return 0.0
    total = float(np.sum(b * b))
    if target > total:
        return math.inf
    bmax = float(b.max())
    if target == total:
        return bmax
    lo, hi = 0.0, bmax
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if g_beta(b, mid) < target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-12 * bmax:
            break
    return 0.5 * (lo + hi)


def m_beta_pi(betas: Sequence[float], pis: Sequence[float], alpha: float) -> float:
    """Distortion reached by the Boolean coordinate-flip channel at level alpha.

    m(alpha) = sum_j beta_j^2 * min(pi_j, 1 / (1 + exp(beta_j^2 / alpha))).
    Nondecreasing in alpha with supremum sum_j beta_j^2 pi_j.
    """
    b = _as_nonnegative_array(betas, "betas")
    p = _as_nonnegative_array(pis, "pis")
    if p.shape != b.shape:
        raise ValueError("betas and pis must have equal length")
    if np.any(p > 0.5) or np.any(p <= 0.0):
        raise ValueError("each pi_j must lie in (0, 1/2]")
    if alpha <= 0.0:
        raise ValueError("alpha must be positive")
    z = b * b / alpha
    ez = np.exp(-z)  # z >= 0, so this cannot overflow
    flip = ez / (1.0 + ez)
    return float(np.sum(b * b * np.minimum(p, flip)))


def m_inverse(betas: Sequence[float], pis: Sequence[float], distortion: float) -> float:
    """Level alpha with m(alpha) = distortion, for 0 < distortion < sup m.

    Bisection to 1e-12 relative tolerance after geometric bracket growth
    (the supremum is approached only as alpha -> inf when some pi_j = 1/2).
    """
    b = _as_nonnegative_array(betas, "betas")
    p = np.asarray(pis, dtype=float)
    cap = float(np.sum(b * b * p))
    if not 0.0 < distortion < cap:
        raise ValueError(f"distortion must lie in (0, {cap})")
    hi = 1.0
    for _ in range(2000):
        if m_beta_pi(b, p, hi) >= distortion:
            break
        hi *= 2.0
    else:  # pragma: no cover - cap above guarantees termination
        raise ArithmeticError("bracket growth failed")
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= 0.0:
            break
        if m_beta_pi(b, p, mid) < distortion:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-12 * hi:
            break
    return 0.5 * (lo + hi)


def boolean_rate(
    betas: Sequence[float], pis: Sequence[float], distortion: float
) -> float:
    """Bits needed to approximate a Boolean additive model within ``distortion``.

    For D below sum_j beta_j^2 pi_j the rate is
    sum over {j : beta_j^2 >= alpha * ln((1-pi_j)/pi_j)} of
    H(pi_j) - H(1/(1 + exp(beta_j^2/alpha)))  with alpha = m^{-1}(D);
    coordinates outside that set are flipped at their full marginal rate
    and contribute nothing.  Above the threshold the rate is zero.
    """
    b = _as_nonnegative_array(betas, "betas")
    p = np.asarray(pis, dtype=float)
    if distortion <= 0.0:
        raise ValueError("distortion must be positive")
    cap = float(np.sum(b * b * p))
    if distortion >= cap:
        return 0.0
    alpha = m_inverse(b, p, distortion)
    z = b * b / alpha
    ez = np.exp(-z)
    flip = ez / (1.0 + ez)
    with np.errstate(divide="ignore"):
        log_odds = np.log((1.0 - p) / p)
    included = b * b >= alpha * log_odds
    rate = 0.0
    for j in range(b.size):
        if included[j]:
            rate += binary_entropy(float(p[j])) - binary_entropy(float(flip[j]))
    return max(rate, 0.0)


def univariate_rate_bound(
    distortion: float, *, entropy: float | None = None, p: float | None = None
) -> float:
    """Single-coordinate rate bound in bits at squared-error distortion D.

    Continuous marginals with differential entropy h (bits) give
    max(0, h - (1/2) log2(2 pi e D)); Bernoulli(p) marginals give
    max(0, H(p) - H(D)) for D < 1.
    """
    if (entropy is None) == (p is None):
        raise ValueError("pass exactly one of entropy= or p=")
    if distortion <= 0.0:
        raise ValueError("distortion must be positive")
    if entropy is not None:
        return max(0.0, entropy - 0.5 * math.log2(_TWO_PI_E * distortion))
    if not 0.0 < p <= 0.5:
        raise ValueError("p must lie in (0, 1/2]")
    if distortion >= 1.0:
        raise ValueError("Bernoulli rate bound needs distortion < 1")
    return max(0.0, binary_entropy(p) - binary_entropy(distortion))


# ---------------------------------------------------------------------------
# Distortion optimization.
# ---------------------------------------------------------------------------

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


def _golden_minimize_log(
    objective: Callable[[float], float],
    lo: float,
    hi: float,
    rel_tol: float = 1e-9,
) -> tuple[float, float]:
    """Golden-section minimization over log-spaced (lo, hi); returns (x, f(x)).

    The endpoints themselves compete with the interior bracket, so
    monotone objectives return a range endpoint exactly.
    """
    if not 0.0 < lo <= hi:
        raise ValueError("need 0 < lo <= hi")
    candidates = [(objective(lo), lo), (objective(hi), hi)]
    if lo < hi:
        a, b = math.log(lo), math.log(hi)
        c = b - _INV_PHI * (b - a)
        d = a + _INV_PHI * (b - a)
        fc = objective(math.exp(c))
        fd = objective(math.exp(d))
        while b - a > rel_tol:
            if fc < fd:
                b, d, fd = d, c, fc
                c = b - _INV_PHI * (b - a)
                fc = objective(math.exp(c))
            else:
                a, c, fc = c, d, fd
                d = a + _INV_PHI * (b - a)
                fd = objective(math.exp(d))
        xm = math.exp(0.5 * (a + b))
        candidates.extend([(fc, math.exp(c)), (fd, math.exp(d)), (objective(xm), xm)])
    fbest, xbest = min(candidates, key=lambda t: t[0])
    return xbest, fbest


@dataclass(frozen=True, slots=True)
class BoundResult:
    """A bound value plus how it was reached.

    ``distortion`` is the minimizing (or plugged-in) distortion level when
    one exists, ``alpha`` the associated inclusion threshold, ``clamped``
    whether a negative raw value was truncated to zero.
    """

    value: float
    formula: str
    distortion: float | None = None
    alpha: float | None = None
    clamped: bool = False


def minimize_rd_objective(
    rate_fn: Callable[[float], float],
    noise_variance: float,
    n: int,
    d_range: tuple[float, float],
) -> BoundResult:
    """Minimize (1/2) (D + sigma^2 2^{R(D)} / n) over D in ``d_range``.

    Golden-section search on log D with relative tolerance 1e-9; the
    returned value is half the minimized objective, matching the generic
    risk lower bound shape.
    """
    if noise_variance < 0.0:
        raise ValueError("noise_variance must be >= 0")
    if n < 1:
        raise ValueError("n must be a positive integer")
    lo, hi = d_range
    sigma2 = float(noise_variance)

    def objective(dist: float) -> float:
        try:
            penalty = sigma2 * math.pow(2.0, rate_fn(dist)) / n
        except OverflowError:
            return math.inf
        return dist + penalty

    d_star, f_star = _golden_minimize_log(objective, lo, hi)
    return BoundResult(
        value=0.5 * f_star, formula="rd_objective", distortion=d_star
    )


# ---------------------------------------------------------------------------
# Named bounds.
# ---------------------------------------------------------------------------


def linear_lower_bound_cube(
    sparsity: int, beta0: float, entropy: float, noise_variance: float, n: int
) -> BoundResult:
    """Closed-form risk lower bound for s-sparse linear models on the cube.

    value = s * 2^{2 s h / (s+2) - 2} * (beta0^2 / (pi e))^{s/(s+2)}
              * (sigma^2 / n)^{2/(s+2)}
    where h is the per-coordinate differential entropy in bits.  The
    recorded distortion is the optimizing D from the derivation, which is
    exactly twice the bound.
    """
    if sparsity < 1:
        raise ValueError("sparsity must be >= 1")
    if beta0 < 0.0:
        raise ValueError("beta0 must be >= 0")
    if noise_variance < 0.0 or n < 1:
        raise ValueError("need noise_variance >= 0 and n >= 1")
    s = float(sparsity)
    value = (
        s
        * math.pow(2.0, 2.0 * s * entropy / (s + 2.0) - 2.0)
        * math.pow(beta0 * beta0 / (math.pi * math.e), s / (s + 2.0))
        * math.pow(noise_variance / n, 2.0 / (s + 2.0))
    )
    return BoundResult(
        value=value, formula="linear_lower_cube", distortion=2.0 * value
    )


def additive_lower_bound(
    *,
    noise_variance: float,
    n: int,
    mode: str = "general",
    betas: Sequence[float] | None = None,
    sparsity: int | None = None,
    beta0: float | None = None,
    density_floor: float = 1.0,
    region_measure: float = 1.0,
) -> BoundResult:
    """Risk lower bound for additive models with known slope magnitudes.

    ``mode="sparse"`` evaluates the closed form for s coordinates of equal
    slope beta0:
        s * mu * (beta0^2 q_min / 12)^{s/(s+2)} * (sigma^2/(4n))^{2/(s+2)},
    which is also the distortion level optimizing the general objective in
    that configuration.  ``mode="general"`` takes a vector of per-coordinate
    slope lower bounds and minimizes
        D + (mu sigma^2 / (4n)) * prod_{j: beta_j >= alpha(D)} beta_j/alpha(D),
        alpha(D) = g^{-1}(12 D / (q_min mu)),
    over D in [1e-14 ||beta||^2, ||beta||^2 q_min mu / 12] by golden-section
    search on log D.  ``density_floor`` (q_min) and ``region_measure`` (the
    mass mu of the region where the floor holds) default to the uniform
    law's values.
    """
    if noise_variance < 0.0 or n < 1:
        raise ValueError("need noise_variance >= 0 and n >= 1")
    if density_floor <= 0.0 or region_measure <= 0.0:
        raise ValueError("density_floor and region_measure must be positive")
    if mode == "sparse":
        if sparsity is None or beta0 is None:
            raise ValueError("sparse mode needs sparsity and beta0")
        if sparsity < 1 or beta0 < 0.0:
            raise ValueError("need sparsity >= 1 and beta0 >= 0")
        s = float(sparsity)
        value = (
            s
            * region_measure
            * math.pow(beta0 * beta0 * density_floor / 12.0, s / (s + 2.0))
            * math.pow(noise_variance / (4.0 * n), 2.0 / (s + 2.0))
        )
        return BoundResult(
            value=value, formula="additive_lower_sparse", distortion=value
        )
    if mode != "general":
        raise ValueError(f"unknown mode {mode!r}")
    if betas is None:
        raise ValueError("general mode needs a betas vector")
    b = _as_nonnegative_array(betas, "betas")
    total = float(np.sum(b * b))
    noise_floor = region_measure * noise_variance / (4.0 * n)
    if total == 0.0:
        return BoundResult(
            value=noise_floor, formula="additive_lower_general", distortion=0.0
        )
    log_b = np.log(b, out=np.full_like(b, -math.inf), where=b > 0)

    def objective(dist: float) -> float:
        alpha = g_beta_inverse(b, 12.0 * dist / (density_floor * region_measure))
        if math.isinf(alpha):
            return dist + noise_floor
        if alpha <= 0.0:
            return math.inf
        log_prod = float(np.sum(np.maximum(log_b - math.log(alpha), 0.0)))
        try:
            return dist + noise_floor * math.exp(log_prod)
        except OverflowError:
            return math.inf

    hi = total * density_floor * region_measure / 12.0
    d_star, f_star = _golden_minimize_log(objective, min(1e-14 * total, hi), hi)
    alpha_star = g_beta_inverse(b, 12.0 * d_star / (density_floor * region_measure))
    return BoundResult(
        value=f_star,
        formula="additive_lower_general",
        distortion=d_star,
        alpha=None if math.isinf(alpha_star) else alpha_star,
    )


def boolean_lower_bound(
    *,
    noise_variance: float,
    n: int,
    mode: str = "general",
    betas: Sequence[float] | None = None,
    pis: Sequence[float] | None = None,
    sparsity: int | None = None,
    beta0: float | None = None,
    p: float | None = None,
) -> BoundResult:
    """Risk lower bound for additive models on the Boolean cube.

    ``mode="general"`` minimizes (1/2)(D + sigma^2 2^{R(D)}/n) with the
    exact Boolean rate over D in (1e-14 M, M], M = sum_j beta_j^2 pi_j.
    ``mode="sparse"`` evaluates the looser closed form for s >= 2 equal
    coordinates:
        (s beta0^2 / 2) * (1 - (2 e^s n beta0^2 / (2^{s H(p)} sigma^2))^{1/(s-1)}),
    truncated at zero (``clamped`` records the truncation).
    """
    if noise_variance < 0.0 or n < 1:
        raise ValueError("need noise_variance >= 0 and n >= 1")
    if mode == "sparse":
        if sparsity is None or beta0 is None or p is None:
            raise ValueError("sparse mode needs sparsity, beta0 and p")
        if sparsity < 2:
            raise ValueError("sparse mode needs sparsity >= 2 (exponent 1/(s-1))")
        if not 0.0 < p <= 0.5:
            raise ValueError("p must lie in (0, 1/2]")
        if noise_variance == 0.0:
            raise ValueError("sparse mode needs noise_variance > 0")
        s = float(sparsity)
        ratio = (
            2.0
            * math.exp(s)
            * n
            * beta0
            * beta0
            / (math.pow(2.0, s * binary_entropy(p)) * noise_variance)
        )
        raw = 0.5 * s * beta0 * beta0 * (1.0 - math.pow(ratio, 1.0 / (s - 1.0)))
        return BoundResult(
            value=max(raw, 0.0),
            formula="boolean_lower_sparse",
            clamped=raw < 0.0,
        )
    if mode != "general":
        raise ValueError(f"unknown mode {mode!r}")
    if betas is None or pis is None:
        raise ValueError("general mode needs betas and pis vectors")
    b = _as_nonnegative_array(betas, "betas")
    p_arr = np.asarray(pis, dtype=float)
    cap = float(np.sum(b * b * p_arr))
    if cap == 0.0:
        # Zero signal: the rate vanishes for every D, so the infimum over
        # D > 0 of (1/2)(D + sigma^2/n) is the noise floor.
        return BoundResult(
            value=0.5 * noise_variance / n,
            formula="boolean_lower_general",
            distortion=0.0,
        )
    result = minimize_rd_objective(
        lambda dist: boolean_rate(b, p_arr, dist),
        noise_variance,
        n,
        (1e-14 * cap, cap),
    )
    alpha = (
        m_inverse(b, p_arr, result.distortion) if result.distortion < cap else None
    )
    return BoundResult(
        value=result.value,
        formula="boolean_lower_general",
        distortion=result.distortion,
        alpha=alpha,
    )


@dataclass(frozen=True, slots=True)
class SparseUpperBound:
    """Constructive upper bound with its tessellation prescription.

    ``side_target`` is the per-coordinate side length whose equal-slab
    tessellation of the support realizes the bound; ``distortion`` is the
    bias level the construction aims at.
    """

    value: float
    side_target: float
    distortion: float


def sparse_additive_upper_bound(
    sparsity: int, beta_max: float, density_cap: float, noise_variance: float, n: int
) -> SparseUpperBound:
    """Risk upper bound achieved by an oracle tessellation estimator.

    With D = 24 s q_sup beta_max^2 (sigma^2/n)^{2/(s+2)} and support sides
    l = min(sqrt(D / (6 s q_sup beta_max^2)), 1), the expected risk is at
    most (168 s q_sup beta_max^2 + 6) sigma^{2s/(s+2)} n^{-2/(s+2)} plus a
    boundary remainder ||f||_inf^2 exp(-sigma^{2s/(s+2)} n^{2/(s+2)}),
    bounded here with ||f||_inf <= s beta_max.
    """
    if sparsity < 1:
        raise ValueError("sparsity must be >= 1")
    if beta_max < 0.0 or density_cap <= 0.0:
        raise ValueError("need beta_max >= 0 and density_cap > 0")
    if noise_variance <= 0.0 or n < 1:
        raise ValueError("need noise_variance > 0 and n >= 1")
    s = float(sparsity)
    rate = math.pow(noise_variance / n, 2.0 / (s + 2.0))
    scale = s * density_cap * beta_max * beta_max
    distortion = 24.0 * scale * rate
    if scale > 0.0:
        side_target = min(math.sqrt(distortion / (6.0 * scale)), 1.0)
    else:
        side_target = 1.0
    sigma_term = math.pow(noise_variance, s / (s + 2.0))
    n_term = math.pow(float(n), -2.0 / (s + 2.0))
    sup_f = s * beta_max
    value = (168.0 * scale + 6.0) * sigma_term * n_term + sup_f * sup_f * math.exp(
        -sigma_term / n_term
    )
    return SparseUpperBound(value=value, side_target=side_target, distortion=distortion)
