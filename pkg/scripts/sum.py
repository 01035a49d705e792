#!/usr/bin/env python3
"""Two-digit sum from pixels: CNN backbone, 3 seeds, 50 epochs.

Extra CLI args pass through, e.g. --set model.backbone=mlp.
"""

import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))
from nesykit.cli import main  # noqa: E402

HERE = os.path.dirname(os.path.abspath(__file__))

if __name__ == "__main__":
    cfg = os.path.join(HERE, "..", "configs", "sum.cfg")
    sys.exit(main(["train", "--config", cfg, *sys.argv[1:]]))
