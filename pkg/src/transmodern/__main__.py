"""
`python -m transmodern` runs the command-line interface.
"""

import sys

from .cli import main

if __name__ == "__main__":  # pragma: nocover
    sys.exit(main())
