#!/usr/bin/env python3
"""One-shot transfer: reuse trained sum perception nets on subtraction.

Usage: minus_transfer.py CHECKPOINT [extra args]

The checkpoint comes from a sum run (runs/sum/seed*/model.ckpt). Only the
nets are loaded; the rule table restarts from zero and must be re-learned
from 100 samples.
"""

import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))
from nesykit.cli import main  # noqa: E402

HERE = os.path.dirname(os.path.abspath(__file__))

if __name__ == "__main__":
    if len(sys.argv) < 2 or sys.argv[1].startswith("-"):
        print("usage: minus_transfer.py CHECKPOINT [args]", file=sys.stderr)
        sys.exit(1)
    cfg = os.path.join(HERE, "..", "configs", "minus_transfer.cfg")
    sys.exit(main(["transfer", "--config", cfg, "--task", "minus",
                   "--from", sys.argv[1], *sys.argv[2:]]))
