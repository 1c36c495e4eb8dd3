#!/usr/bin/env python3
"""Full spectral survey for one configuration: cocycle grid scan, IDS and
gap labels, Thouless residuals, and reduced pairs, all through the CLI so
every output lands as a reproducible artifact.
"""

import argparse
import os
import sys

from qplab.cli import main as qplab_main


def run(config, outdir):
    for sub in ("rotation", "ids", "thouless", "kam"):
        rc = qplab_main([sub, "--config", config, "--out", outdir, "--verbose"])
        if rc != 0:
            print(f"{sub} failed with exit code {rc}", file=sys.stderr)
            return rc
    return 0


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default="configs/harper_spectral.yaml")
    ap.add_argument("--out", default="results/spectral_survey")
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)
    sys.exit(run(args.config, args.out))
