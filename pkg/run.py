#!/usr/bin/env python3
"""
Entry point for the jPINN toolkit.

Equivalent to the ``jpinn`` console script, e.g.::

    python run.py simulate --out runs/sim
    python run.py train --data runs/sim/data.csv --out runs/train --mode joint
"""

import sys

from jpinn.cli import main

if __name__ == "__main__":
    sys.exit(main())
