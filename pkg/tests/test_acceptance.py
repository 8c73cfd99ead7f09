"""System-level acceptance checks.

Each test here exercises one end-to-end guarantee: convergence rates of
the honest and oracle estimators, two-sided risk coverage on randomized
partitions, agreement of fast code paths with exhaustive oracles, and
byte-level reproducibility of the experiment runner.  The terminal
summary (see conftest) prints one PASS/FAIL line per test.
"""

import math
import time
from fractions import Fraction

import numpy as np

from leafavg._rng import derive_seed
from leafavg.bounds import (
    additive_lower_bound,
    binary_entropy,
    boolean_lower_bound,
    boolean_rate,
    decompose_risk,
    g_beta,
    g_beta_inverse,
    linear_lower_bound_cube,
    m_beta_pi,
    m_inverse,
    minimize_rd_objective,
    sparse_additive_upper_bound,
    univariate_rate_bound,
)
from leafavg.cli import main
from leafavg.geometry import (
    BooleanCell,
    cell_measure,
    conditional_moments,
    grid_partition,
    locate_many,
)
from leafavg.harness import (
    build_estimator,
    config_from_dict,
    fit_params_from_config,
    fit_rate,
    model_from_config,
    records_to_points,
    run_experiment,
)
from leafavg.models import (
    AdditiveModel,
    Dataset,
    boolean_product,
    linear,
    sample_dataset,
    square,
    uniform_cube,
    zero,
)
from leafavg.trees import FitParams, fit_cart

SEED = 20260815


def _exact_ala_risk(partition, means, model):
    """Integrated squared error of a leaf-averaging fit, by cell moments."""
    parts = []
    for cell, pred in zip(partition.cells, means):
        mass = cell_measure(cell, model.distribution)
        mom = conditional_moments(cell, model)
        parts.append(mass * (mom.variance + (mom.mean - pred) ** 2))
    return math.fsum(parts)


def test_honest_cart_convergence_rate_bands():
    """Fitted log-log rates for honest CART on wide sparse linear designs.

    d = 50, sigma^2 = 0.01, unit coefficients on the first s coordinates;
    the slope magnitude must land in (0.08, 0.30) for s = 10 and in
    (0.04, 0.20) for s = 20, within a ten-minute budget.
    """
    start = time.perf_counter()
    for sparsity, lo, hi in ((10, 0.08, 0.30), (20, 0.04, 0.20)):
        cfg = config_from_dict(
            {
                "dimension": 50,
                "sparsity": sparsity,
                "component_kind": "linear",
                "coefficient": 1.0,
                "noise_variance": 0.01,
                "n_grid": [500, 1000, 2000, 4000, 8000],
                "replicates": 10,
                "test_size": 500,
                "estimators": ["honest_cart"],
                "min_samples_leaf": 5,
                "seed": SEED,
            }
        )
        records = run_experiment(cfg)
        fit = fit_rate(records_to_points(records, "honest_cart"))
        assert lo <= -fit.slope <= hi, (
            f"s={sparsity}: slope {fit.slope} outside [-{hi}, -{lo}]"
        )
    assert time.perf_counter() - start <= 600.0


def test_oracle_partition_rate_and_risk_sandwich():
    """Oracle tessellation on a 2-sparse linear model over [0,1]^10.

    Over n doubling from 1000 to 64000 (10 replicates each) the exact
    integrated risk must average between the sparse lower bound - 3 SE
    and the constructive upper bound + 3 SE at every n, and the fitted
    log-log slope must sit within 0.12 of -1/2.
    """
    cfg = config_from_dict(
        {
            "dimension": 10,
            "sparsity": 2,
            "component_kind": "linear",
            "coefficient": 1.0,
            "noise_variance": 0.01,
        }
    )
    model = model_from_config(cfg)
    params = fit_params_from_config(cfg)
    points = []
    for n in (1000, 2000, 4000, 8000, 16000, 32000, 64000):
        risks = []
        for rep in range(10):
            data = sample_dataset(model, n, derive_seed(SEED, "oracle-rate", n, rep))
            est = build_estimator("oracle_partition", data, params, model)
            risks.append(_exact_ala_risk(est.partition, est.means, model))
        mean = float(np.mean(risks))
        se = float(np.std(risks, ddof=1)) / math.sqrt(len(risks))
        upper = sparse_additive_upper_bound(2, 1.0, 1.0, 0.01, n).value
        lower = additive_lower_bound(
            noise_variance=0.01, n=n, mode="sparse", sparsity=2, beta0=1.0
        ).value
        assert mean <= upper + 3.0 * se, f"n={n}: mean {mean} above {upper}"
        assert mean >= lower - 3.0 * se, f"n={n}: mean {mean} below {lower}"
        points.extend((n, r) for r in risks)
    slope = fit_rate(points).slope
    assert abs(slope - (-0.5)) <= 0.12, f"slope {slope} not within 0.12 of -0.5"


def _random_sandwich_case(rng):
    """A random grid partition, additive model and compatible sample size.

    Slab edges keep every side at least 0.25 wide, so the smallest cell
    mass is at least 0.25^5 and permissibility is reachable with
    n <= 2000; n is then drawn between that threshold and 2000.
    """
    d = int(rng.integers(1, 6))
    axis_edges = {}
    for j in range(d):
        r = rng.random()
        if r < 0.45:
            continue
        if r < 0.80:
            axis_edges[j] = [0.0, float(rng.uniform(0.3, 0.7)), 1.0]
        else:
            e1 = float(rng.uniform(0.25, 0.35))
            e2 = float(rng.uniform(0.60, 0.70))
            axis_edges[j] = [0.0, e1, e2, 1.0]
    partition = grid_partition(axis_edges, d)
    components = []
    for _ in range(d):
        r = rng.random()
        if r < 0.35:
            components.append(zero())
        elif r < 0.70:
            components.append(linear(float(rng.uniform(0.3, 2.0))))
        else:
            components.append(square(float(rng.uniform(0.3, 2.0))))
    model = AdditiveModel(
        tuple(components), uniform_cube(d), float(rng.uniform(0.0, 1.0))
    )
    min_mass = min(cell_measure(c, model.distribution) for c in partition.cells)
    n = int(rng.integers(max(50, math.ceil(1.0 / min_mass)), 2001))
    return partition, model, n


def test_random_partition_risk_sandwich_coverage():
    """Two-sided coverage of the expected risk on randomized setups.

    100 random (partition, model, n) cases, each risk averaged over 200
    training replicates via exact per-fit integration; the mean must lie
    in [lower - 3 SE, upper + 3 SE] in at least 99 cases, within five
    minutes.
    """
    start = time.perf_counter()
    rng = np.random.default_rng(SEED)
    hits = 0
    for case in range(100):
        partition, model, n = _random_sandwich_case(rng)
        report = decompose_risk(partition, model, n)
        masses = np.array(
            [cell_measure(c, model.distribution) for c in partition.cells]
        )
        moments = [conditional_moments(c, model) for c in partition.cells]
        cell_means = np.array([m.mean for m in moments])
        bias = float(np.sum(masses * np.array([m.variance for m in moments])))
        k = len(partition)
        replicates = 200
        risks = np.empty(replicates)
        for rep in range(replicates):
            data = sample_dataset(model, n, derive_seed(SEED, "sandwich", case, rep))
            idx = locate_many(partition, data.x)
            counts = np.bincount(idx, minlength=k).astype(float)
            sums = np.bincount(idx, weights=data.y, minlength=k)
            preds = np.divide(sums, counts, out=np.zeros(k), where=counts > 0)
            risks[rep] = bias + float(np.sum(masses * (cell_means - preds) ** 2))
        mean = float(risks.mean())
        se = float(risks.std(ddof=1)) / math.sqrt(replicates)
        if report.lower_bound - 3.0 * se <= mean <= report.upper_bound + 3.0 * se:
            hits += 1
    assert hits >= 99, f"sandwich coverage {hits}/100"
    assert time.perf_counter() - start <= 300.0


def test_boolean_moments_match_exhaustive_enumeration():
    """Cell mass, mean and variance versus full 2^d enumeration.

    200 random Boolean models and subcubes with d <= 12; every moment
    must agree to 1e-12 absolute.
    """
    rng = np.random.default_rng(SEED)
    for _ in range(200):
        d = int(rng.integers(1, 13))
        pis = rng.uniform(0.05, 0.5, size=d)
        components = []
        for _ in range(d):
            r = rng.random()
            if r < 0.3:
                components.append(zero())
            elif r < 0.65:
                components.append(linear(float(rng.uniform(-2.0, 2.0)) or 1.0))
            else:
                components.append(square(float(rng.uniform(-2.0, 2.0)) or 1.0))
        model = AdditiveModel(
            tuple(components), boolean_product(tuple(pis)), 0.3
        )
        fixed = tuple(
            (j, int(rng.integers(0, 2))) for j in range(d) if rng.random() < 0.4
        )
        cell = BooleanCell(dimension=d, fixed=fixed)

        free = [j for j in range(d) if j not in dict(fixed)]
        f = len(free)
        bits = (np.arange(1 << f)[:, None] >> np.arange(f)[None, :]) & 1
        x = np.zeros((1 << f, d))
        for j, v in fixed:
            x[:, j] = v
        x[:, free] = bits
        weights = np.prod(np.where(bits == 1, pis[free], 1.0 - pis[free]), axis=1)
        values = np.array(
            [
                math.fsum(
                    model.components[j](float(row[j])) for j in range(d)
                )
                for row in x
            ]
        )
        mass = math.prod(pis[j] if v else 1.0 - pis[j] for j, v in fixed)
        mean = float(np.sum(weights * values))
        var = float(np.sum(weights * values**2)) - mean * mean

        mom = conditional_moments(cell, model)
        assert abs(cell_measure(cell, model.distribution) - mass) <= 1e-12
        assert abs(mom.mean - mean) <= 1e-12
        assert abs(mom.variance - var) <= 1e-12


def _exhaustive_root_split(x, y, min_samples_leaf):
    """Best (feature, threshold) by exact rational sum-of-squares algebra.

    Floats are dyadic rationals, so Fraction arithmetic evaluates every
    candidate's SSE decrease with no rounding; exact cross-feature ties
    (which random discrete designs do produce) then break to the lowest
    feature and threshold through the strict > scan order.
    """
    n = len(y)
    ys = [Fraction(v) for v in y]
    total = sum(ys)
    best = None
    for j in range(x.shape[1]):
        vals = np.unique(x[:, j])
        for a, b in zip(vals[:-1], vals[1:]):
            thr = 0.5 * (a + b)
            if thr <= a:
                continue
            mask = x[:, j] < thr
            n_left = int(mask.sum())
            n_right = n - n_left
            if n_left < min_samples_leaf or n_right < min_samples_leaf:
                continue
            s_left = sum(v for v, inside in zip(ys, mask) if inside)
            s_right = total - s_left
            dec = s_left**2 / n_left + s_right**2 / n_right - total**2 / n
            if dec > 0 and (best is None or dec > best[0]):
                best = (dec, j, thr)
    return None if best is None else (best[1], best[2])


def test_greedy_root_split_matches_exhaustive_search():
    """fit_cart's root split equals exhaustive search, ties included.

    200 random datasets (n <= 50, d <= 3) mixing continuous features
    with tiny discrete alphabets so exact ties occur; the greedy split
    must equal the exhaustive argmax under the lowest-feature,
    lowest-threshold tie rule, as exact floats.
    """
    rng = np.random.default_rng(SEED)
    for case in range(200):
        n = int(rng.integers(2, 51))
        d = int(rng.integers(1, 4))
        x = np.empty((n, d))
        for j in range(d):
            style = rng.integers(0, 4)
            if style == 0:
                x[:, j] = rng.random(n)
            else:
                alphabet = rng.choice([2, 3, 5])
                x[:, j] = rng.integers(0, alphabet, size=n) / (alphabet - 1.0)
        style = rng.integers(0, 3)
        if style == 0:
            y = rng.normal(size=n)
        elif style == 1:
            y = x @ rng.normal(size=d) + 0.1 * rng.normal(size=n)
        else:
            y = np.round(rng.normal(size=n))  # repeated values force ties
        msl = int(rng.integers(1, 4))

        tree = fit_cart(Dataset(x, y), FitParams(min_samples_leaf=msl, max_depth=1))
        greedy = (
            None
            if tree.root.is_leaf
            else (tree.root.feature, tree.root.threshold)
        )
        assert greedy == _exhaustive_root_split(x, y, msl), f"case {case}"


def _grid_search_boolean_objective(betas, pis, sigma2, n, points=10_000):
    """Two-stage 10^4-point grid minimum of (D + sigma^2 2^R(D) / n) / 2.

    The bisection for the inclusion threshold and the rate formula are
    re-derived here on arrays, independent of the library's scalar path.
    """
    b2 = betas * betas
    cap = float(np.sum(b2 * pis))
    log_odds = np.log((1.0 - pis) / pis)
    entropies = np.array([binary_entropy(float(p)) for p in pis])

    def achieved(alpha):
        ez = np.exp(-b2[None, :] / alpha[:, None])
        return np.sum(b2[None, :] * np.minimum(pis[None, :], ez / (1.0 + ez)), axis=1)

    def rates(ds):
        lo = np.full(ds.shape, 1e-18)
        hi = np.full(ds.shape, 1e9 * float(b2.max()))
        for _ in range(120):
            mid = 0.5 * (lo + hi)
            too_low = achieved(mid) < ds
            lo = np.where(too_low, mid, lo)
            hi = np.where(too_low, hi, mid)
        alpha = 0.5 * (lo + hi)
        ez = np.exp(-b2[None, :] / alpha[:, None])
        flip = np.clip(ez / (1.0 + ez), 1e-300, 0.5)
        hq = -(flip * np.log2(flip) + (1.0 - flip) * np.log2(1.0 - flip))
        included = b2[None, :] >= alpha[:, None] * log_odds[None, :]
        return np.maximum(
            np.sum(np.where(included, entropies[None, :] - hq, 0.0), axis=1), 0.0
        )

    def objective(ds):
        vals = 0.5 * (ds + sigma2 * np.exp2(rates(ds)) / n)
        at_cap = ds >= cap
        vals[at_cap] = 0.5 * (ds[at_cap] + sigma2 / n)
        return vals

    coarse = np.geomspace(cap * 1e-14, cap, points // 2)
    cv = objective(coarse)
    i = int(np.argmin(cv))
    fine = np.linspace(
        coarse[max(i - 1, 0)], coarse[min(i + 1, coarse.size - 1)], points // 2
    )
    return min(float(cv.min()), float(objective(fine).min()))


def test_optimizers_match_closed_form_and_grid_search():
    """Distortion optimizers agree with analytic and brute-force answers.

    Continuous: for 50 random (beta0, sigma^2, n), minimizing
    D + sigma^2 2^{R(D)}/n with the differential-entropy rate recovers
    the closed form for 1-sparse linear models: minimizing D equal to
    twice the closed-form value and objective value equal to three times
    it, both to 1e-6 relative.  Boolean: for 20 random models the
    general bound matches a 10^4-point grid search to 1e-4 relative.
    """
    rng = np.random.default_rng(SEED)
    for _ in range(50):
        beta0 = float(rng.uniform(0.8, 2.0))
        sigma2 = float(rng.uniform(0.1, 2.0))
        n = int(rng.integers(200, 100_001))
        closed = linear_lower_bound_cube(1, beta0, 0.0, sigma2, n)
        res = minimize_rd_objective(
            lambda dist: univariate_rate_bound(dist, entropy=math.log2(beta0)),
            sigma2,
            n,
            (1e-9, 1.0),
        )
        assert abs(res.distortion - closed.distortion) <= 1e-6 * closed.distortion
        assert abs(res.value - 3.0 * closed.value) <= 1e-6 * 3.0 * closed.value

    for _ in range(20):
        d = int(rng.integers(2, 7))
        betas = rng.uniform(0.3, 2.0, size=d)
        pis = rng.uniform(0.1, 0.5, size=d)
        sigma2 = float(rng.uniform(0.5, 50.0))
        n = int(rng.integers(1, 1001))
        res = boolean_lower_bound(
            noise_variance=sigma2, n=n, mode="general", betas=betas, pis=pis
        )
        grid = _grid_search_boolean_objective(betas, pis, sigma2, n)
        assert abs(res.value - grid) <= 1e-4 * grid


def test_inversion_round_trips_and_bound_monotonicity():
    """Inverse maps and bound shape laws.

    Round trips of the side-scale map and its Boolean analogue hold to
    1e-10; every lower bound is nonincreasing in n; the unclamped lower
    bounds are nondecreasing in the signal scale while the clamped
    Boolean form peaks and then collapses (checked explicitly);
    coordinatewise-dominated signals never need more bits; and the
    sparse bounds' log-log slope in n is exactly -2/(s+2) to 1e-12.
    """
    rng = np.random.default_rng(SEED)
    for _ in range(100):
        d = int(rng.integers(1, 6))
        betas = rng.uniform(0.05, 5.0, size=d)
        alpha = float(rng.uniform(1e-3, float(betas.max())))
        back = g_beta_inverse(betas, g_beta(betas, alpha))
        assert abs(back - alpha) <= 1e-10 * max(1.0, float(betas.max()))

    for _ in range(100):
        d = int(rng.integers(1, 6))
        betas = rng.uniform(0.1, 3.0, size=d)
        pis = rng.uniform(0.05, 0.5, size=d)
        cap = float(np.sum(betas * betas * pis))
        target = float(rng.uniform(0.05, 0.95)) * cap
        # m can plateau, so the round trip compares achieved distortion.
        achieved = m_beta_pi(betas, pis, m_inverse(betas, pis, target))
        assert abs(achieved - target) <= 1e-10 * cap

    ns = (10, 100, 1000, 10_000)
    general_betas = (0.5, 1.5, 0.0)
    bool_betas, bool_pis = (1.0, 0.7), (0.5, 0.3)
    by_n = {
        "linear_cube": [
            linear_lower_bound_cube(2, 1.0, 0.0, 1.0, n).value for n in ns
        ],
        "additive_sparse": [
            additive_lower_bound(
                noise_variance=1.0, n=n, mode="sparse", sparsity=2, beta0=1.0
            ).value
            for n in ns
        ],
        "additive_general": [
            additive_lower_bound(
                noise_variance=1.0, n=n, mode="general", betas=general_betas
            ).value
            for n in ns
        ],
        "boolean_general": [
            boolean_lower_bound(
                noise_variance=1.0, n=n, mode="general", betas=bool_betas, pis=bool_pis
            ).value
            for n in ns
        ],
        "boolean_sparse": [
            boolean_lower_bound(
                noise_variance=50.0, n=n, mode="sparse", sparsity=2, beta0=1.0, p=0.5
            ).value
            for n in ns
        ],
    }
    for name, vals in by_n.items():
        for a, b in zip(vals, vals[1:]):
            assert b <= a + 1e-12, f"{name} increased in n: {vals}"

    scales = (0.2, 0.5, 1.0, 2.0)
    by_scale = {
        "linear_cube": [
            linear_lower_bound_cube(2, t, 0.0, 1.0, 100).value for t in scales
        ],
        "additive_sparse": [
            additive_lower_bound(
                noise_variance=1.0, n=100, mode="sparse", sparsity=2, beta0=t
            ).value
            for t in scales
        ],
        "additive_general": [
            additive_lower_bound(
                noise_variance=1.0,
                n=100,
                mode="general",
                betas=tuple(t * b for b in general_betas),
            ).value
            for t in scales
        ],
        "boolean_general": [
            boolean_lower_bound(
                noise_variance=1.0,
                n=100,
                mode="general",
                betas=tuple(t * b for b in bool_betas),
                pis=bool_pis,
            ).value
            for t in scales
        ],
    }
    for name, vals in by_scale.items():
        for a, b in zip(vals, vals[1:]):
            assert b >= a - 1e-12, f"{name} decreased in signal scale: {vals}"
    # The clamped Boolean form is a genuine exception: its subtracted
    # packing term grows with beta0^2, so the bound rises, peaks, and
    # collapses to the clamp.
    peak = [
        boolean_lower_bound(
            noise_variance=100.0, n=1, mode="sparse", sparsity=2, beta0=b, p=0.5
        ).value
        for b in (1.0, 3.0, 6.0)
    ]
    assert peak[1] > peak[0] and peak[2] < peak[1]

    for _ in range(100):
        d = int(rng.integers(1, 6))
        big = rng.uniform(0.2, 2.5, size=d)
        small = big * rng.uniform(0.2, 1.0, size=d)
        pis = rng.uniform(0.05, 0.5, size=d)
        cap_small = float(np.sum(small * small * pis))
        dist = float(rng.uniform(0.05, 0.95)) * cap_small
        assert boolean_rate(small, pis, dist) <= boolean_rate(big, pis, dist) + 1e-9

    for s in (1, 2, 3, 5):
        want = -2.0 / (s + 2.0)
        grid = [1000 * 2**i for i in range(5)]
        lows = [
            additive_lower_bound(
                noise_variance=1.0, n=n, mode="sparse", sparsity=s, beta0=1.3
            ).value
            for n in grid
        ]
        uppers = [
            sparse_additive_upper_bound(s, 0.0, 1.0, 1.0, n).value for n in grid
        ]
        for vals in (lows, uppers):
            for a, b in zip(vals, vals[1:]):
                assert abs(math.log2(b / a) - want) <= 1e-12


def test_experiment_rerun_is_byte_identical(tmp_path):
    """Running the experiment command twice reproduces the CSV exactly."""
    import json

    cfg = tmp_path / "config.json"
    cfg.write_text(
        json.dumps(
            {
                "dimension": 3,
                "sparsity": 2,
                "component_kind": "linear",
                "coefficient": 1.0,
                "noise_variance": 0.1,
                "n_grid": [60, 120],
                "replicates": 2,
                "test_size": 40,
                "estimators": ["cart", "honest_cart", "forest", "oracle_partition"],
                "min_samples_leaf": 4,
                "n_trees": 5,
                "seed": SEED,
            }
        )
    )
    first, second = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["experiment", "--config", str(cfg), "--out", str(first)]) == 0
    assert main(["experiment", "--config", str(cfg), "--out", str(second)]) == 0
    content = first.read_bytes()
    assert content == second.read_bytes()
    assert content.startswith(b"estimator,n,replicate,seed_used,test_mse,fit_seconds")
