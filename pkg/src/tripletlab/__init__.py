"""Desk-scale adversarial robustness lab for triplet-based metric learning."""

__version__ = "0.1.0"

from .encoder import AdamState, Encoder
from .pgd import PerturbationBudget

__all__ = ["AdamState", "Encoder", "PerturbationBudget", "__version__"]
