#!/usr/bin/env python3
"""
Perceptive Autonomy - Command-Line Entry Point

Runs one experiment stage: gen-data, train, calibrate, ablation, autonomy, report.
"""

import sys

from src.cli import main

if __name__ == "__main__":
    sys.exit(main())
