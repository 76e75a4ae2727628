"""Propagation-of-chaos sweep for the BCM kernel, then a k = 0 sampling-noise baseline per N.

    python3 scripts/run_sweep.py results/sweep [--threads 4]
"""

import argparse
import json
import sys
from pathlib import Path

from chaoslab.cli import main
from chaoslab.config import parse_config
from chaoslab.experiments import sampling_noise_baseline

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "sweep_bcm.json"

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("out")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--force", action="store_true")
    args = ap.parse_args()
    argv = ["sweep", "--config", str(CONFIG), "--out", args.out, "--threads", str(args.threads)]
    code = main(argv + (["--force"] if args.force else []))
    if code:
        sys.exit(code)
    cfg = parse_config(CONFIG).sweep()
    base = {str(N): sampling_noise_baseline(cfg, N, args.threads) for N in cfg.N_list}
    (Path(args.out) / "baseline_w1.json").write_text(json.dumps(base, indent=2, sort_keys=True) + "\n")
    print(json.dumps(base, indent=2, sort_keys=True))
