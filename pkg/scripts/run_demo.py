"""Run the default experiment plan (data, two models, six attacks, channel, report).

Usage: python3 scripts/run_demo.py OUT_DIR [--seed N] [--jobs N]
"""
import argparse
import sys

from ballotadv.cli import main

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=1)
    a = ap.parse_args()
    code = main(["run", "--seed", str(a.seed), "--jobs", str(a.jobs), "--out", a.out])
    if code == 0:
        print(open(f"{a.out}/report/summary.txt").read(), end="")
    sys.exit(code)
