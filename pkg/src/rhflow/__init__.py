"""Numerical verification lab for the coupled Ricci / harmonic-map flow.

Evolves symmetry-reduced torus geometries, computes conjugate heat
kernels against the flow history, and checks the differential Harnack
inequality, entropy monotonicity and bounds, the reduced-distance
comparison, and Sobolev-type kernel bounds at desk scale.
"""

from .backend import BACKEND

__all__ = ["BACKEND", "__version__"]
__version__ = "0.1.0"
