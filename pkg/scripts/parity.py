#!/usr/bin/env python3
"""Visual parity: train on length-4 binary-image sequences, test at 20."""

import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))
from nesykit.cli import main  # noqa: E402

HERE = os.path.dirname(os.path.abspath(__file__))

if __name__ == "__main__":
    cfg = os.path.join(HERE, "..", "configs", "parity.cfg")
    sys.exit(main(["train", "--config", cfg, *sys.argv[1:]]))
