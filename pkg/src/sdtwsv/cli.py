"""Command-line entry point: ``sdtwsv <subcommand> ...``.

Exit codes: 0 success, 2 usage error, 3 missing input file, 4 malformed
input, 5 invalid flag combination, 1 any other failure.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from pathlib import Path

import numpy as np

from . import embedseq, evaluation, metric, synth, verify
from .align import SdtwConfig, format_fragments, sdtw

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_MISSING, EXIT_FORMAT, EXIT_FLAGS = 0, 1, 2, 3, 4, 5
THREADS_ENV = "SDTWSV_THREADS"


class FlagError(Exception):
    pass


def _default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _require(*paths):
    for p in paths:
        if p is not None and not Path(p).exists():
            raise FileNotFoundError(p)


def _policy(args) -> verify.AggregationPolicy:
    if args.agg == "lowest_k" and args.K is None:
        raise FlagError("--agg lowest_k needs -K")
    if args.agg != "lowest_k" and args.K is not None:
        raise FlagError("-K only applies to --agg lowest_k")
    return verify.AggregationPolicy(args.agg, args.K or 1)


def _load_metric(kind: str, model_path):
    if kind == "plda" and model_path is None:
        raise FlagError("--metric plda needs --model")
    if kind == "cosine" and model_path is not None:
        raise FlagError("--model only applies to --metric plda")
    if kind == "plda":
        _require(model_path)
        return metric.PldaMetric(metric.load_plda(model_path))
    return metric.CosineMetric()


def read_labels(path) -> list[tuple[str, str, str]]:
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh, delimiter="\t"), start=1):
            if not row or row[0].startswith("#"):
                continue
            if len(row) not in (2, 3):
                raise ValueError(f"{path}:{lineno}: expected sequence_id, speaker[, split]")
            rows.append((row[0], row[1], row[2] if len(row) == 3 else "train"))
    return rows


# --- subcommands -----------------------------------------------------------

def cmd_synth_gen(args) -> None:
    _require(args.spec)
    cfg = synth.read_generator_spec(args.spec)
    if args.seed is not None:
        cfg["seed"] = args.seed
    out = Path(args.out)
    pop = synth.population_from_config(cfg)
    mismatch = None
    if cfg["splice_fraction"] > 0:
        mismatch = synth.MismatchSpec(cfg["splice_fraction"], cfg["seed"], cfg["distractor_scale"])
    evalset = synth.gen_trialset(pop, cfg["trials_per_class"], cfg["seq_length"], mismatch)
    train_pop = synth.population_from_config(cfg, n_speakers=cfg["n_train_speakers"])
    train, train_owner = synth.gen_training_set(train_pop, cfg["train_utts_per_speaker"], cfg["seq_length"])

    embedseq.write_directory(list(train.values()) + list(evalset.sequences.values()), out / "sequences")
    verify.write_trials(evalset.trials, out / "trials.tsv")
    with open(out / "labels.tsv", "w") as fh:
        for sid, spk in train_owner.items():
            fh.write(f"{sid}\t{spk}\ttrain\n")
        for sid, spk in evalset.speaker_of.items():
            fh.write(f"{sid}\t{spk}\teval\n")
    synth.write_generator_spec(cfg, out / "generator.txt")


def cmd_plda_train(args) -> None:
    _require(args.sequences, args.labels)
    if args.no_lda and args.lda_dim is not None:
        raise FlagError("--lda-dim conflicts with --no-lda")
    seqs = embedseq.read_directory(args.sequences)
    xs, labels = [], []
    for sid, spk, split in read_labels(args.labels):
        if split != args.split:
            continue
        if sid not in seqs:
            raise ValueError(f"labels reference unknown sequence {sid!r}")
        vecs = seqs[sid].vectors
        if args.level == "utterance":
            vecs = vecs.mean(axis=0, keepdims=True)
        xs.append(vecs)
        labels += [spk] * len(vecs)
    if not xs:
        raise ValueError(f"no sequences with split {args.split!r}")
    x = np.concatenate(xs)
    labels = np.asarray(labels)
    n_spk = len(np.unique(labels))
    use_lda = not args.no_lda
    target = args.lda_dim if args.lda_dim is not None else min(200, x.shape[1], n_spk - 1)
    chain = metric.fit_preprocess((x, labels), target, use_lda, not args.no_length_norm)
    model = metric.plda_train((chain.apply(x), labels), args.iterations, chain)
    metric.save_plda(model, args.out)


def cmd_score(args) -> None:
    _require(args.trials, args.sequences)
    policy = _policy(args)
    if args.method == "mean" and (args.R is not None or args.L is not None):
        raise FlagError("-R/-L only apply to --method sdtw")
    cfg = SdtwConfig(1 if args.R is None else args.R, 30 if args.L is None else args.L)
    m = _load_metric(args.metric, args.model)
    trials = verify.read_trials(args.trials)
    seqs = embedseq.read_directory(args.sequences)
    scores = verify.score_trials(trials, seqs, m, args.method, cfg, policy, args.threads)
    verify.write_scores(scores, args.out)


def cmd_fuse(args) -> None:
    _require(args.a, args.b)
    a = verify.read_scores(args.a)
    b = verify.read_scores(args.b)
    verify.write_scores(verify.fuse(a, b, args.weight, args.znorm), args.out)


def cmd_eval(args) -> None:
    _require(args.scores, args.trials)
    trials = verify.read_trials(args.trials)
    scores = verify.read_scores(args.scores, trials)
    conds = args.conditions.split(",") if args.conditions else None
    report = evaluation.condition_report(scores, conds, pooled=args.pooled)
    _emit(report.to_tsv(), args.out)


def cmd_sweep(args) -> None:
    _require(args.trials, args.sequences)
    policy = _policy(args)
    kinds = [k for k in args.metrics.split(",") if k]
    bad = set(kinds) - {"cosine", "plda"}
    if bad or not kinds:
        raise FlagError(f"--metrics takes cosine and/or plda, got {args.metrics!r}")
    if "plda" in kinds and args.model is None:
        raise FlagError("plda in --metrics needs --model")
    model = None
    if args.model is not None:
        _require(args.model)
        model = metric.load_plda(args.model)
    metrics = {k: verify.make_metric(k, model) for k in kinds}
    trials = verify.read_trials(args.trials)
    seqs = embedseq.read_directory(args.sequences)
    grid = evaluation.sweep(trials, seqs, metrics, args.R, args.L, policy, workers=args.threads)
    _emit(evaluation.format_sweep(grid), args.out)


def cmd_align(args) -> None:
    _require(args.enrol, args.test)
    m = _load_metric(args.metric, args.model)
    x = embedseq.read_sequence(args.enrol)
    y = embedseq.read_sequence(args.test)
    _emit(format_fragments(sdtw(x, y, m, SdtwConfig(args.R, args.L))), args.out)


def _emit(text: str, out) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sdtwsv", description="SDTW speaker verification scoring")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth-gen", help="generate synthetic sequences and a trial list")
    s.add_argument("--spec", required=True, help="generator spec file")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_synth_gen)

    s = sub.add_parser("plda-train", help="fit the front-end and PLDA model")
    s.add_argument("--sequences", required=True)
    s.add_argument("--labels", required=True, help="TSV: sequence_id, speaker[, split]")
    s.add_argument("--out", required=True)
    s.add_argument("--split", default="train")
    s.add_argument("--level", choices=["window", "utterance"], default="window")
    s.add_argument("--iterations", type=int, default=10)
    s.add_argument("--lda-dim", type=int)
    s.add_argument("--no-lda", action="store_true")
    s.add_argument("--no-length-norm", action="store_true")
    s.set_defaults(func=cmd_plda_train)

    def scoring_flags(s):
        s.add_argument("--agg", choices=["mean", "lowest_k", "min"], default="mean")
        s.add_argument("-K", type=int)
        s.add_argument("--model")
        s.add_argument("--threads", type=int, default=_default_threads())

    s = sub.add_parser("score", help="score a trial list")
    s.add_argument("--trials", required=True)
    s.add_argument("--sequences", required=True)
    s.add_argument("--method", choices=["sdtw", "mean"], default="sdtw")
    s.add_argument("--metric", choices=["cosine", "plda"], default="cosine")
    s.add_argument("-R", type=int)
    s.add_argument("-L", type=int)
    s.add_argument("--out", required=True)
    scoring_flags(s)
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("fuse", help="weighted combination of two score files")
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True)
    s.add_argument("--weight", type=float, default=0.5)
    s.add_argument("--znorm", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fuse)

    s = sub.add_parser("eval", help="per-condition EER report")
    s.add_argument("--scores", required=True)
    s.add_argument("--trials", required=True)
    s.add_argument("--conditions", help="comma-separated reporting order")
    s.add_argument("--pooled", action="store_true")
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="average EER over an (R, L) grid")
    s.add_argument("--trials", required=True)
    s.add_argument("--sequences", required=True)
    s.add_argument("--metrics", default="cosine,plda")
    s.add_argument("-R", type=_int_list, default=[1, 2, 5])
    s.add_argument("-L", type=_int_list, default=[10, 30, 50])
    s.add_argument("--out")
    scoring_flags(s)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("align", help="dump SDTW fragments of two sequences")
    s.add_argument("--enrol", required=True)
    s.add_argument("--test", required=True)
    s.add_argument("--metric", choices=["cosine", "plda"], default="cosine")
    s.add_argument("--model")
    s.add_argument("-R", type=int, default=1)
    s.add_argument("-L", type=int, default=30)
    s.add_argument("--out")
    s.set_defaults(func=cmd_align)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if getattr(args, "threads", 1) < 1:
            raise FlagError("--threads must be >= 1")
        if getattr(args, "weight", 0.5) is not None and not 0 <= getattr(args, "weight", 0.5) <= 1:
            raise FlagError("--weight must lie in [0, 1]")
        args.func(args)
    except FlagError as exc:
        print(f"sdtwsv {args.command}: {exc}", file=sys.stderr)
        return EXIT_FLAGS
    except FileNotFoundError as exc:
        print(f"sdtwsv {args.command}: no such file: {exc.filename or exc}", file=sys.stderr)
        return EXIT_MISSING
    except (embedseq.SequenceFormatError, ValueError, KeyError) as exc:
        print(f"sdtwsv {args.command}: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except Exception as exc:  # noqa: BLE001
        print(f"sdtwsv {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
