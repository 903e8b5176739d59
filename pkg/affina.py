#!/usr/bin/env python3
"""affina command-line entry point (see `affina.py --help`)."""
import os
import sys

# Add the project root to Python path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from src.cli import main  # noqa: E402

if __name__ == "__main__":
    main()
