"""SE(3) geometry shared by every other subpackage."""
