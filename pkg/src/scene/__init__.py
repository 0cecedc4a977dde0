"""Digital twin, depth-camera emulation and dataset generation."""
