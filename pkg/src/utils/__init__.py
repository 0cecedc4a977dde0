"""Formatting and cell-execution helpers shared by tools and evaluation."""
