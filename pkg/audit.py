"""
Entry point for the auditing command line.

Run with: python audit.py run --preset rr-oracle
"""

import sys

from lib.cli import main


if __name__ == "__main__":
    sys.exit(main())
