"""Per-user insider-threat day detection with skip-gram summaries and Bayesian GMMs."""

__version__ = "0.1.0"
