"""Classical correspondence-based registration."""
