"""Model-aware, cost-aware hyperparameter optimization for gradient-boosted trees."""

__version__ = "0.1.0"
