"""Command line interface: generate, annotate, train, eval, tune, gmad.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import annotation, config, data, metrics, synthetic, training, tuning
from .data import ATTRIBUTES, DataError, PARAM_NAMES

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 on usage errors, not argparse's 2
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="fgiqa", description=__doc__)
    parser.add_argument("--config", type=Path, default=None, help="flat key/value config file")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out-dir", type=Path, default=Path("."))
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic dataset")
    p.add_argument("--scenes", type=int, default=20)
    p.add_argument("--variants", type=int, default=10)
    p.add_argument("--annotators", type=int, default=16)
    p.add_argument("--noise-sd", type=float, default=0.3)
    p.add_argument("--image-size", type=int, default=96)
    p.add_argument("--train-fraction", type=float, default=0.75)
    p.add_argument("--no-params", action="store_true", help="omit camera parameters")
    p.add_argument("--distortion-strength", type=float, default=1.0,
                   help="how visible parameter deviations are in the pixels")
    p.add_argument("--opt-spread", type=float, default=0.15,
                   help="half-width of the per-scene optimum range in normalized units")

    p = sub.add_parser("annotate", help="run the annotation pipeline")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--screening-threshold", type=float, default=0.75)
    p.add_argument("--fine-threshold", type=float, default=0.8)

    p = sub.add_parser("train", help="train a model on the manifest's train split")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, default=None, help="output path")
    p.add_argument("--use-gcpf", action="store_true")
    p.add_argument("--epochs", type=int, default=None)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")

    p = sub.add_parser("tune", help="simulate sweeps and rank them with the model")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--sweeps", type=int, default=20)
    p.add_argument("--steps", type=int, default=15)
    p.add_argument("--span", type=float, default=0.35,
                   help="normalized half-width of each sweep around the scene optimum")
    p.add_argument("--params", nargs="+", choices=PARAM_NAMES, default=list(PARAM_NAMES),
                   help="parameters eligible for sweeping")
    p.add_argument("--image-size", type=int, default=96)
    p.add_argument("--contact-sheet", action="store_true")

    p = sub.add_parser("gmad", help="maximum-differentiation pair selection")
    p.add_argument("--scores-a", type=Path, required=True, help="defender score file")
    p.add_argument("--scores-b", type=Path, required=True, help="attacker score file")
    p.add_argument("--levels", type=int, default=4)
    p.add_argument("--tol", type=float, default=None)
    return parser


def _load_cfg(args) -> tuple[training.TrainConfig, dict]:
    flat = config.load_flat(args.config) if args.config else {}
    cfg = config.train_config_from_flat(flat)
    ranges = config.ranges_from_flat(flat)
    return cfg, ranges


def _cmd_generate(args) -> int:
    _, ranges = _load_cfg(args)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    manifest = synthetic.generate_dataset(
        args.out_dir,
        n_scenes=args.scenes,
        variants_per_scene=args.variants,
        n_annotators=args.annotators,
        noise_sd=args.noise_sd,
        seed=args.seed,
        image_size=args.image_size,
        with_params=not args.no_params,
        train_fraction=args.train_fraction,
        ranges=ranges,
        distortion_strength=args.distortion_strength,
        opt_spread=args.opt_spread,
    )
    out = args.out_dir / "manifest.jsonl"
    data.save_manifest(manifest, out)
    print(f"wrote {len(manifest.samples)} samples / {len(manifest.annotations)} annotations to {out}")
    return EXIT_OK


def _cmd_annotate(args) -> int:
    manifest = data.load_manifest(args.manifest)
    result = annotation.annotation_pipeline(
        manifest,
        fine_threshold=args.fine_threshold,
        screening_threshold=args.screening_threshold,
    )
    args.out_dir.mkdir(parents=True, exist_ok=True)
    annotation.save_pairs(result.pairs, args.out_dir / "pairs.jsonl")
    with (args.out_dir / "mos.jsonl").open("w", encoding="utf-8") as fh:
        for rec in result.mos_records:
            fh.write(
                json.dumps(
                    {
                        "image_id": rec.image_id,
                        "mos": rec.mos,
                        "variance": rec.variance,
                        "count": rec.count,
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    with (args.out_dir / "screening.txt").open("w", encoding="utf-8") as fh:
        for rep in result.screening:
            plcc = "undefined" if rep.plcc_to_mos is None else f"{rep.plcc_to_mos:.6f}"
            fh.write(f"{rep.annotator_id} plcc={plcc} retained={rep.retained}\n")
    print(
        f"{len(result.pairs)} pairs, "
        f"{result.fine_grained_fraction:.1%} fine-grained, "
        f"{sum(r.retained for r in result.screening)}/{len(result.screening)} annotators retained"
    )
    return EXIT_OK


def _cmd_train(args) -> int:
    cfg, _ = _load_cfg(args)
    overrides = {}
    if args.use_gcpf:
        overrides["use_gcpf"] = True
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if args.seed is not None:
        overrides["seed"] = args.seed
    if overrides:
        d = cfg.to_dict()
        d.update(overrides)
        cfg = training.TrainConfig.from_dict(d)
    manifest = data.load_manifest(args.manifest)
    ckpt = training.train(manifest, cfg, args.manifest.parent)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    out = args.checkpoint if args.checkpoint else args.out_dir / "checkpoint.pt"
    training.save_checkpoint(ckpt, out)
    last = ckpt.history[-1] if ckpt.history else {}
    print(f"saved checkpoint to {out}; final epoch: {json.dumps(last, sort_keys=True)}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    manifest = data.load_manifest(args.manifest)
    ckpt = training.load_checkpoint(args.checkpoint)
    report, scores = training.evaluate_checkpoint_with_scores(
        ckpt, manifest, args.manifest.parent, subset=args.split
    )
    args.out_dir.mkdir(parents=True, exist_ok=True)
    report.save(args.out_dir / "metrics.txt")
    with (args.out_dir / "scores.tsv").open("w", encoding="utf-8") as fh:
        fh.write("image_id\t" + "\t".join(ATTRIBUTES) + "\n")
        for image_id in sorted(scores):
            row = "\t".join(f"{v:.10f}" for v in scores[image_id])
            fh.write(f"{image_id}\t{row}\n")
    sys.stdout.write(report.to_text())
    return EXIT_OK


def _cmd_tune(args) -> int:
    _, ranges = _load_cfg(args)
    ckpt = training.load_checkpoint(args.checkpoint)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    results = []
    summary = {"top20": 0, "wins_vs_score": 0.0}
    pair_winners, score_winners = [], []
    streams = np.random.SeedSequence(args.seed).spawn(args.sweeps)
    for i, seq in enumerate(streams):
        rng = np.random.default_rng(seq)
        scene = synthetic._sample_scene_spec(f"sweep{i:03d}", rng, ranges)
        param = args.params[int(rng.integers(0, len(args.params)))]
        spec = tuning.single_parameter_sweep(
            scene, param, n_steps=args.steps, span=args.span, ranges=ranges, seed=args.seed
        )
        sweep = tuning.simulate_sweep(spec, ranges, image_size=args.image_size)
        images = [s for _, s in sweep]
        truth = [
            synthetic.true_quality(p, scene.optimal_params, ranges)["overall"]
            for p, _ in sweep
        ]
        pairwise = tuning.rank_candidates(images, ckpt)
        score_map = dict(zip((s.image_id for s in images), tuning.model_overall_scores(images, ckpt)))
        score_based = tuning.score_rank_candidates(images, lambda s: score_map[s.image_id])
        results.append((scene.scene_id, pairwise))
        pair_winners.append(truth[pairwise.winner])
        score_winners.append(truth[score_based.winner])
        cutoff = sorted(truth, reverse=True)[max(1, round(0.2 * len(truth))) - 1]
        summary["top20"] += truth[pairwise.winner] >= cutoff
        if args.contact_sheet:
            tuning.contact_sheet(
                images, pairwise.ranking, args.out_dir / f"sweep{i:03d}_sheet.png"
            )
    tuning.save_tuning_results(results, args.out_dir / "tuning.jsonl")
    rate = tuning.win_rate(pair_winners, score_winners)
    print(
        f"{args.sweeps} sweeps: pairwise winner in top 20% of true quality in "
        f"{summary['top20']}/{args.sweeps}; win rate vs score-based ranking {rate:.2f}"
    )
    return EXIT_OK


def _read_scores(path: Path) -> tuple[list[str], np.ndarray]:
    ids, values = [], []
    with path.open("r", encoding="utf-8") as fh:
        header = fh.readline().split()
        col = header.index("overall") if "overall" in header else 1
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            ids.append(parts[0])
            values.append(float(parts[col]))
    if not ids:
        raise DataError(f"no scores found in {path}")
    return ids, np.array(values)


def _cmd_gmad(args) -> int:
    ids_a, defender = _read_scores(args.scores_a)
    ids_b, attacker = _read_scores(args.scores_b)
    if ids_a != ids_b:
        raise DataError("score files cover different image sets")
    pairs = metrics.gmad_select(defender, attacker, n_levels=args.levels, tol=args.tol)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    out = args.out_dir / "gmad_pairs.txt"
    with out.open("w", encoding="utf-8") as fh:
        for i, j in pairs:
            fh.write(f"{ids_a[i]} {ids_a[j]}\n")
    print(f"selected {len(pairs)} pairs -> {out}")
    return EXIT_OK


_COMMANDS = {
    "generate": _cmd_generate,
    "annotate": _cmd_annotate,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "tune": _cmd_tune,
    "gmad": _cmd_gmad,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return _COMMANDS[args.command](args)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except training.TrainingError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
