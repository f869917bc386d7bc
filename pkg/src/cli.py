#!/usr/bin/env python3
"""
navmem command-line entry point.

Usage:
    python src/cli.py <command> [--preset desk|paper] [--config FILE] [--seed N] [--out DIR] [--set key=value]
"""

import sys

from tools.navigation.cli import main


if __name__ == "__main__":
    sys.exit(main())
