"""Average EER of SDTW scoring over an (R, L) grid for cosine and PLDA local distances.

    python3 scripts/rl_sweep.py [--seed 2024] [-R 1,2,5] [-L 10,30,50] [--out sweep.tsv]
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

from common import build  # noqa: E402

from sdtwsv.evaluation import format_sweep, sweep  # noqa: E402


def _ints(text):
    return [int(x) for x in text.split(",") if x]


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("-R", type=_ints, default=[1, 2, 5])
    ap.add_argument("-L", type=_ints, default=[10, 30, 50])
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out")
    args = ap.parse_args()

    evalset, metrics = build(args.seed)
    grid = sweep(evalset.trials, evalset.sequences, metrics, args.R, args.L, workers=args.threads)
    text = format_sweep(grid)
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)


if __name__ == "__main__":
    main()
