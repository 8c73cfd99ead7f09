"""Leaf-averaging tree estimators for sparse additive models.

The package covers the full pipeline: generative models (``models``),
axis-aligned partitions and their exact conditional moments
(``geometry``), CART / honest CART / forest / fixed-partition estimators
(``trees``), exact risk decompositions and information-theoretic risk
bounds (``bounds``), and a reproducible experiment harness with a CLI
(``harness``, ``cli``).
"""

from . import bounds, geometry, harness, models, trees
from ._rng import derive_seed, make_rng

__all__ = [
    "models",
    "geometry",
    "trees",
    "bounds",
    "harness",
    "derive_seed",
    "make_rng",
]

__version__ = "0.1.0"
