"""Perceptive autonomy toolkit: registration, pose uncertainty and shared-autonomy control."""
