"""
Package entry point - allows running the CLI as a module.
This enables: python -m qmagpi <scenario> --config <path>
"""

import sys

from .cli import main

if __name__ == "__main__":
    sys.exit(main())
