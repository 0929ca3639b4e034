"""Hybrid CNN/quantum federated learning with DP-weighted aggregation,
selective CKKS encryption of the classifier head and adaptive layer freezing."""

__version__ = "0.1.0"
