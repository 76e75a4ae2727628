"""LLN exceedance study for the uniform kernel with Gaussian samples.

    python3 scripts/run_lln.py results/lln
"""

import sys
from pathlib import Path

from chaoslab.cli import main

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "lln_uniform.json"

if __name__ == "__main__":
    if len(sys.argv) < 2:
        sys.exit(__doc__)
    sys.exit(main(["lln", "--config", str(CONFIG), "--out", sys.argv[1], *sys.argv[2:]]))
