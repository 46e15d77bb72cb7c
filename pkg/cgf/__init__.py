"""Causal-graph fuzzy text forecasting with a small attention-pooled regressor."""
__version__ = '0.1.0'
