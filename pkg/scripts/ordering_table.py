"""EER of mean-embedding and SDTW scoring, cosine vs PLDA, plus a score fusion row.

    python3 scripts/ordering_table.py [--seed 2024] [-R 1] [-L 30] [--out table.tsv]
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

from common import build  # noqa: E402

from sdtwsv.align import SdtwConfig  # noqa: E402
from sdtwsv.evaluation import compute_eer, split_scores  # noqa: E402
from sdtwsv.verify import fuse, score_trials  # noqa: E402


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("-R", type=int, default=1)
    ap.add_argument("-L", type=int, default=30)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out")
    args = ap.parse_args()

    evalset, metrics = build(args.seed)
    cfg = SdtwConfig(args.R, args.L)
    scores = {}
    for name, m in metrics.items():
        for method in ("mean", "sdtw"):
            scores[name, method] = score_trials(evalset.trials, evalset.sequences, m, method, cfg,
                                                workers=args.threads)
    scores["plda", "mean+sdtw fused"] = fuse(scores["plda", "mean"], scores["plda", "sdtw"], 0.5, znorm=True)

    rows = ["system\tmetric\teer"]
    for (name, method), s in scores.items():
        rows.append(f"{method}\t{name}\t{compute_eer(*split_scores(s)):.4f}")
    text = "\n".join(rows) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)


if __name__ == "__main__":
    main()
