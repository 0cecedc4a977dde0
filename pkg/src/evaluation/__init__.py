"""Experiment harness: per-regime artifacts, ablation, autonomy study and reports."""
