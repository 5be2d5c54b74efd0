"""Numerical study of the stable/unstable splitting of Anosov torus maps."""

from .torus import MapSpec, ShearTerm, cat_map, perturbed_cat_map

__all__ = ["MapSpec", "ShearTerm", "cat_map", "perturbed_cat_map"]
__version__ = "0.1.0"
