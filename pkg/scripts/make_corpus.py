#!/usr/bin/env python3
"""Write the synthetic play corpus used for training runs.

Usage: python scripts/make_corpus.py --out data/plays.txt
"""

import sys

from lmn.corpus import main

if __name__ == "__main__":
    sys.exit(main())
