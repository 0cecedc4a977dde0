"""Sampling-free pose uncertainty and the calibration baselines."""
