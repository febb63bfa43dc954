"""Clifford group equivariant simplicial message passing networks.

Submodules:

* ``algebra``: dense Clifford algebra over a diagonal quadratic form
* ``layers``: equivariant linear, geometric product, gating and norm layers
* ``topology``: simplicial complexes, lifts, adjacencies and flattening
* ``model``: simplex embedding, shared/separate message passing, readouts
* ``autodiff``: the reverse-mode tape, Adam and gradient checking
* ``tasks``: hull and trajectory datasets, metrics, training, benchmarks
* ``estimator``: scikit-learn style transformers and regressors
* ``cli``: the ``csmpn`` command
"""

from .algebra import Metric, Multivector, OrthogonalMap, random_orthogonal
from .model import CSMPN, GeometricComplex, MPConfig
from .topology import SimplicialComplex, cech, clique_lift, flatten, manual_lift, vietoris_rips

__version__ = "0.1.0"

__all__ = [
    "CSMPN",
    "GeometricComplex",
    "MPConfig",
    "Metric",
    "Multivector",
    "OrthogonalMap",
    "SimplicialComplex",
    "cech",
    "clique_lift",
    "flatten",
    "manual_lift",
    "random_orthogonal",
    "vietoris_rips",
]
