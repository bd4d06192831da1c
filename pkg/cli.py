#!/usr/bin/env python3
"""Command-line entry point for the redundancy-lens package."""

import sys

from redundancy_lens.cli import main

if __name__ == "__main__":
    sys.exit(main())
