"""Neuron point-cloud topology under permutation-equivariant training."""

__version__ = "0.1.0"

from .particles import ParticleCollection, Permutation, apply_permutation, step  # noqa: E402

__all__ = ["ParticleCollection", "Permutation", "apply_permutation", "step", "__version__"]
