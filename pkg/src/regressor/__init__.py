"""Learned pose regression from correspondence features."""
