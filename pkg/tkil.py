#!/usr/bin/env python3
"""
TKIL - class-incremental learning experiments.
Terminal entry point; see `python tkil.py --help`.
"""

import sys

from src.cli import main

if __name__ == "__main__":
    sys.exit(main())
