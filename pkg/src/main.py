"""
Command-line entry point: train, eval, gradcheck, bench-pruning and demo.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from src.core.app_context import app_context
from src.core.exceptions import RefDinoError
from src.core.logging_config import generate_run_id, set_run_id, setup_structured_logging
from src.core.metrics import write_metrics
from src.schemas.config import RunConfig
from src.services.scene_generator import SUITES, SceneGenerator

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED_CHECK = 1
EXIT_ERROR = 2


def _run_config(path: Optional[str]) -> RunConfig:
    config = RunConfig.from_file(path) if path else RunConfig()
    seed = app_context.config.get("seed_override")
    return config.with_overrides(seed=seed) if seed is not None else config


def _parse_ks(text: str) -> List[int]:
    try:
        ks = [int(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"--k expects comma-separated integers: {text}") from exc
    if not ks or any(k < 1 for k in ks):
        raise argparse.ArgumentTypeError(f"--k values must be >= 1: {text}")
    return ks


# -----------------------------
# Sub-commands
# -----------------------------


def cmd_train(args: argparse.Namespace) -> int:
    from src.services.trainer import Trainer

    config = _run_config(args.config)
    if args.steps is not None:
        config = config.with_overrides(steps=args.steps)
    out_dir = Path(args.out or app_context.config["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.env").write_text(config.to_lines())

    result = Trainer(config, out_dir=out_dir).train()
    final = f"{result.losses[-1]:.6f}" if result.losses else "n/a"
    print(f"trained {result.steps} steps, final loss {final}, checkpoint {result.checkpoint}")
    if args.metrics_out:
        write_metrics(args.metrics_out)
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    from src.services.checkpoint_manager import load_model
    from src.services.evaluator import evaluate, write_report
    from src.services.scene_generator import HELD_OUT_SEED_OFFSET

    model, step = load_model(args.checkpoint)
    config = model.config
    generator = SceneGenerator(config.frames, config.height, config.width)
    seed = args.seed if args.seed is not None else HELD_OUT_SEED_OFFSET + config.seed
    scenes = generator.suite(args.suite, args.count, seed=seed)
    result = evaluate(model, scenes, suite=args.suite, rng=np.random.default_rng(config.seed))
    write_report(result, args.report)
    accuracy = (
        f", selection accuracy {result.selection_accuracy:.3f}"
        if result.selection_accuracy is not None
        else ""
    )
    print(
        f"{args.suite} ({len(scenes)} videos, step {step}): J={result.j_mean:.4f} "
        f"F={result.f_mean:.4f} J&F={result.jf_mean:.4f}{accuracy}"
    )
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace) -> int:
    from src.services.self_checks import GRADCHECK_TOLERANCE, REGISTRY, run_checks

    if args.module != "all" and args.module not in REGISTRY:
        print(f"unknown module {args.module!r}; choose from {', '.join(REGISTRY)}")
        return EXIT_ERROR
    results = run_checks(args.module, seed=args.seed)
    failed = 0
    for name, error in results.items():
        status = "ok" if error <= GRADCHECK_TOLERANCE else "FAIL"
        failed += status == "FAIL"
        print(f"{name:<45} {error:.3e}  {status}")
    print(f"{len(results) - failed}/{len(results)} checks within {GRADCHECK_TOLERANCE:g}")
    return EXIT_FAILED_CHECK if failed else EXIT_OK


def cmd_bench_pruning(args: argparse.Namespace) -> int:
    from src.services.pruning_bench import bench_pruning

    model, scenes = None, None
    if args.checkpoint:
        from src.services.checkpoint_manager import load_model

        model, _ = load_model(args.checkpoint)
        config = model.config
        generator = SceneGenerator(config.frames, config.height, config.width)
        scenes = generator.suite("standard", args.count, seed=args.seed)

    report = bench_pruning(
        args.n,
        args.layers,
        args.dim,
        args.k,
        model=model,
        scenes=scenes,
        seed=args.seed,
        measure=args.measure,
    )
    print(f"N={report.n_queries} L={report.layers} d={report.dim}")
    print(f"{'k':>3} {'drop':>6} {'measured':>10} {'closed':>10}  chain")
    for row in report.rows:
        closed = f"{row.closed_form_ratio:.5f}" if row.closed_form_ratio is not None else "-"
        print(
            f"{row.k:>3} {row.drop_rate:>6.0%} {row.measured_ratio:>10.5f} {closed:>10}  "
            f"{row.chain}"
        )
    for strategy, jf in report.jf_by_strategy.items():
        print(f"J&F with {strategy} pruning: {jf:.4f}")
    if args.report:
        path = Path(args.report)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(report.model_dump_json(indent=2) + "\n")
    return EXIT_OK


def cmd_demo(args: argparse.Namespace) -> int:
    from src.models.referdino import ReferDino
    from src.models.vocabulary import decode_program
    from src.services.evaluator import predict_masks, score_video
    from src.services.mask_export import write_pgm_frames, write_rle

    if args.checkpoint:
        from src.services.checkpoint_manager import load_model

        model, _ = load_model(args.checkpoint)
    else:
        model = ReferDino(_run_config(args.config))
    config = model.config
    scene = SceneGenerator(config.frames, config.height, config.width).generate(
        args.seed, args.difficulty
    )
    prediction, chosen = predict_masks(model, scene, np.random.default_rng(config.seed))
    score = score_video(scene.scene_id, prediction, scene.target_masks())

    out = Path(args.out)
    write_rle(out / "prediction.rle", prediction)
    write_rle(out / "target.rle", scene.target_masks())
    write_pgm_frames(out / "frames", prediction, prefix="prediction")
    (out / "program.txt").write_text(" ".join(decode_program(scene.program_ids)) + "\n")
    print(
        f"{scene.scene_id}: '{' '.join(decode_program(scene.program_ids))}', "
        f"candidates {chosen}, J&F={score.jf:.4f}, written to {out}"
    )
    return EXIT_OK


# -----------------------------
# Parser
# -----------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="refdino-desk",
        description="Desk-scale referring video object segmentation on synthetic scenes",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train a model on generated scenes")
    train.add_argument("--config", help="flat key=value run configuration")
    train.add_argument("--out", help="output directory for checkpoints and the loss curve")
    train.add_argument("--steps", type=int, help="override the configured step count")
    train.add_argument("--metrics-out", help="write the prometheus exposition here")
    train.set_defaults(handler=cmd_train)

    evaluate = sub.add_parser("eval", help="evaluate a checkpoint on a scene suite")
    evaluate.add_argument("--checkpoint", required=True)
    evaluate.add_argument("--suite", choices=SUITES, default="standard")
    evaluate.add_argument("--report", required=True, help="per-video CSV report")
    evaluate.add_argument("--count", type=int, default=8)
    evaluate.add_argument("--seed", type=int, help="first scene seed of the suite")
    evaluate.set_defaults(handler=cmd_eval)

    gradcheck = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    gradcheck.add_argument("--module", default="all")
    gradcheck.add_argument("--seed", type=int, default=0)
    gradcheck.set_defaults(handler=cmd_gradcheck)

    bench = sub.add_parser("bench-pruning", help="decoder cost with and without pruning")
    bench.add_argument("--n", type=int, default=900)
    bench.add_argument("--layers", type=int, default=6)
    bench.add_argument("--dim", type=int, default=256)
    bench.add_argument("--k", type=_parse_ks, default=[2, 3, 4])
    bench.add_argument("--checkpoint", help="also compare J&F per pruning strategy")
    bench.add_argument("--count", type=int, default=8)
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--report", help="write the report as JSON")
    bench.add_argument(
        "--measure",
        action="store_true",
        help="decode random features and report the recorded ledgers",
    )
    bench.set_defaults(handler=cmd_bench_pruning)

    demo = sub.add_parser("demo", help="segment one generated scene and export masks")
    demo.add_argument("--seed", type=int, required=True)
    demo.add_argument("--out", required=True)
    demo.add_argument("--difficulty", type=int, default=1, choices=[0, 1, 2, 3])
    demo.add_argument("--checkpoint")
    demo.add_argument("--config")
    demo.set_defaults(handler=cmd_demo)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    config = app_context.config
    setup_structured_logging(
        log_dir=config.get("log_dir", "./logs"),
        log_level=config.get("log_level", "INFO"),
        json_output=config.get("json_logging", True),
        console_output=config.get("console_logging", True),
    )
    set_run_id(generate_run_id())
    try:
        return args.handler(args)
    except RefDinoError as exc:
        logger.error(f"{args.command} failed: {exc}", exc_info=True)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
