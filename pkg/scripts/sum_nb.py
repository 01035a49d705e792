#!/usr/bin/env python3
"""Sum with no prior symbol budget: two separate nets, 20 symbols each.

Surplus symbols go unused; the report's active-column counts show how many
symbols the nets actually grounded.
"""

import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))
from nesykit.cli import main  # noqa: E402

HERE = os.path.dirname(os.path.abspath(__file__))

if __name__ == "__main__":
    cfg = os.path.join(HERE, "..", "configs", "sum_nb.cfg")
    sys.exit(main(["train", "--config", cfg, *sys.argv[1:]]))
