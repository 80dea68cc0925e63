"""Command-line surface for sparse attention warping."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from .attention import SizeCapError, cycle_loss, dense_warp, downsample_area
from .bench import run_bench
from .config import config
from .dataset_synth import RECORDS_FILE, SynthConfig, synth_manipulation_pair, write_pair
from .env import LOG_LEVEL_VAR, env_str, load_env
from .key_sampler import sample_key_indices
from .local_edit import PipelineConfig, composite_local, resolve_features, warp_full
from .sparse_warp import dedupe_keys, keys_to_tensor, sparse_attention_field
from .tensor_io import (
    ArgumentError,
    Image,
    IngestionError,
    LabelMap,
    Mask,
    TensorFormatError,
    load_image,
    load_label_map,
    load_mask,
    save_image,
    save_tensor,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ARGUMENT = 2
EXIT_FORMAT = 3
EXIT_SIZE_CAP = 4


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        prog="hrwarp",
        description="Warp images onto edited semantic layouts with sparse attention.",
    )
    parser.add_argument(
        "--env-file",
        help="Path to a .env file to load before running commands. Defaults to project .env if present.",
    )
    parser.add_argument("--verbose", action="store_true", help="Log debug progress to stderr.")
    parser.add_argument(
        "--threads",
        type=int,
        help="Worker threads; results do not depend on it (default: HRWARP_THREADS or 1).",
    )
    parser.add_argument(
        "--preset",
        default="default",
        choices=sorted(config),
        help="Configuration preset; explicit flags override its values (default: %(default)s).",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    warp = subparsers.add_parser("warp", help="Sparse warp onto the target layout and composite inside the mask.")
    add_input_arguments(warp, mask=True)
    add_sampling_arguments(warp)
    add_feature_arguments(warp)
    warp.add_argument("--output", required=True, help="Composited PNG.")
    warp.add_argument("--raw-output", help="Optional PNG of the raw warp before compositing.")
    warp.add_argument("--dump-keys", help="Optional HRT1 dump of per-query (y, x, weight) triples.")

    dense = subparsers.add_parser("dense-warp", help="Dense attention oracle warp.")
    add_input_arguments(dense, mask=True)
    add_sampling_arguments(dense)
    add_feature_arguments(dense)
    dense.add_argument("--output", required=True, help="Warped PNG (composited when --mask is given).")

    sample = subparsers.add_parser("sample-keys", help="Run key sampling and dump the key index sets.")
    add_input_arguments(sample, mask=True)
    add_sampling_arguments(sample)
    add_feature_arguments(sample)
    sample.add_argument("--dump-keys", required=True, help="HRT1 output of per-query (y, x, weight) triples.")

    cycle = subparsers.add_parser("cycle-loss", help="Cycle-consistency loss at reduced resolution.")
    add_input_arguments(cycle, mask=False)
    add_sampling_arguments(cycle)
    add_feature_arguments(cycle)
    cycle.add_argument(
        "--downsample",
        type=int,
        default=4,
        help="Area-pooling factor applied before the dense computation (default: %(default)s).",
    )

    synth = subparsers.add_parser("synth-dataset", help="Synthesise manipulation pairs from one image/label pair.")
    synth.add_argument("--image", required=True, help="Ground-truth RGB PNG (path or URL).")
    synth.add_argument("--labels", required=True, help="Its label map PNG (path or URL).")
    synth.add_argument("--seed", type=int, help="First seed; pair i uses seed + i (default: 0).")
    synth.add_argument("--count", type=int, default=1, help="Number of seeds to try (default: %(default)s).")
    synth.add_argument("--out-dir", required=True, help="Directory for PNGs and records.jsonl.")
    synth.add_argument("--max-iters", type=int, default=50, help="Trials per seed (default: %(default)s).")
    synth.add_argument(
        "--hull-ratio-gate",
        action="store_true",
        help="Reject components whose hull/area ratio exceeds 0.2; since that ratio is at least 1, every component is rejected.",
    )

    bench = subparsers.add_parser("bench", help="Count similarity evaluations of sparse and dense paths.")
    add_sampling_arguments(bench)
    bench.add_argument("--sizes", type=int, nargs="+", default=[64, 128, 256], help="Square sizes to sample.")
    bench.add_argument("--dense-sizes", type=int, nargs="*", default=[], help="Square sizes for the dense oracle.")
    bench.add_argument("--channels", type=int, default=16, help="Feature channels (default: %(default)s).")
    bench.add_argument("--output", help="JSON-lines report file. Defaults to stdout.")

    return parser.parse_args(argv)


def add_input_arguments(parser: argparse.ArgumentParser, *, mask: bool) -> None:
    parser.add_argument("--image", required=True, help="Source RGB PNG x0 (path or URL).")
    parser.add_argument("--labels", required=True, help="Source label map c0, 8-bit single channel.")
    parser.add_argument("--target-labels", required=True, help="Edited label map c1.")
    if mask:
        parser.add_argument("--mask", help="Editable-region PNG; nonzero pixels are edited. Defaults to the whole image.")


def add_sampling_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, help="Sampler seed (default: HRWARP_SEED or 0).")
    parser.add_argument("--gamma", type=float, help="Softmax temperature (default: HRWARP_GAMMA or 100).")
    parser.add_argument("--iters", type=int, help="Iterations N.")
    parser.add_argument("--particles", type=int, help="Particle slots M.")
    parser.add_argument("--init-samples", type=int, help="Random samples k per particle.")
    parser.add_argument("--w0", type=float, help="Initial window; defaults to max(H, W).")
    parser.add_argument("--lambda", dest="decay_lambda", type=float, help="Window decay rate.")
    parser.add_argument("--cutoff", type=int, help="Iteration from which the window is 0.")
    parser.add_argument("--prop-mode", choices=["adjusted", "raw"], help="Propagation mode.")
    parser.add_argument("--extra-prop", type=int, help="Extra propagate-evaluate passes per iteration.")
    parser.add_argument("--neighbors", type=int, choices=[4, 8], help="Propagation neighbourhood.")
    parser.add_argument(
        "--subpixel",
        action="store_const",
        const=True,
        help="Draw continuous random candidates instead of integer-grid ones.",
    )
    parser.add_argument("--label-penalty", choices=["on", "off"], help="Semantic label penalty.")
    parser.add_argument("--label-penalty-mode", choices=["hard", "soft"], help="Label penalty variant.")
    parser.add_argument("--penalty-value", type=float, help="Constant subtracted on label mismatch or masked source.")
    parser.add_argument(
        "--reconstruction",
        action="store_const",
        const=True,
        help="Exclude sources whose bilinear footprint touches the mask.",
    )
    parser.add_argument(
        "--no-dedupe",
        dest="dedupe",
        action="store_const",
        const=False,
        help="Keep repeated keys in the softmax.",
    )
    parser.add_argument(
        "--force-dense",
        action="store_const",
        const=True,
        help="Allow dense operations above the size cap.",
    )


def add_feature_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--features-src", help="HRT1 source features u_x; replaces the built-in provider.")
    parser.add_argument("--features-tgt", help="HRT1 target features u_c; required with --features-src.")


def build_pipeline_config(args: argparse.Namespace) -> PipelineConfig:
    overrides: dict[str, Any] = {
        "iterations": args.iters,
        "particle_slots": args.particles,
        "init_samples": args.init_samples,
        "window_w0": args.w0,
        "decay_lambda": args.decay_lambda,
        "decay_cutoff": args.cutoff,
        "extra_propagations": args.extra_prop,
        "propagation_mode": args.prop_mode,
        "neighbor_set": args.neighbors,
        "subpixel": args.subpixel,
        "seed": args.seed,
        "threads": args.threads,
        "gamma": args.gamma,
        "allow_oversize": args.force_dense,
        "label_penalty": None if args.label_penalty is None else args.label_penalty == "on",
        "label_penalty_mode": args.label_penalty_mode,
        "penalty_value": args.penalty_value,
        "reconstruction_mode": args.reconstruction,
        "dedupe": args.dedupe,
        "features_src": getattr(args, "features_src", None),
        "features_tgt": getattr(args, "features_tgt", None),
    }
    return config[args.preset].pipeline(**overrides)


def configure_logging(verbose: bool) -> None:
    level_name = "DEBUG" if verbose else env_str(LOG_LEVEL_VAR, "WARNING").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        raise ArgumentError(f"{LOG_LEVEL_VAR} must name a logging level, got '{level_name}'")
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = parse_args(argv)

    try:
        load_env(args.env_file, overwrite=bool(args.env_file))
        configure_logging(args.verbose)
        return dispatch(args)
    except (ArgumentError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARGUMENT
    except (TensorFormatError, IngestionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except SizeCapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SIZE_CAP
    except RuntimeError as exc:
        raise SystemExit(f"error: {exc}") from exc


def dispatch(args: argparse.Namespace) -> int:
    if args.command == "warp":
        return run_warp(args)
    if args.command == "dense-warp":
        return run_dense_warp(args)
    if args.command == "sample-keys":
        return run_sample_keys(args)
    if args.command == "cycle-loss":
        return run_cycle_loss(args)
    if args.command == "synth-dataset":
        return run_synth_dataset(args)
    if args.command == "bench":
        return run_bench_command(args)
    raise ArgumentError(f"Unknown command '{args.command}'")


def load_inputs(args: argparse.Namespace, *, require_mask: bool = False) -> tuple[Image, LabelMap, LabelMap, Mask]:
    """Read x0, c0, c1 and the mask; a missing mask makes every pixel editable."""

    x0 = load_image(args.image)
    c0 = load_label_map(args.labels)
    c1 = load_label_map(args.target_labels)
    mask_source = getattr(args, "mask", None)
    if mask_source:
        m = load_mask(mask_source)
    elif require_mask:
        raise ArgumentError("reconstruction mode needs --mask")
    else:
        m = Mask(np.ones(x0.shape, dtype=bool))
    return x0, c0, c1, m


def emit(payload: dict) -> None:
    print(json.dumps(payload, indent=2, ensure_ascii=False))


def run_warp(args: argparse.Namespace) -> int:
    cfg = build_pipeline_config(args)
    x0, c0, c1, m = load_inputs(args, require_mask=cfg.reconstruction_mode)
    result = warp_full(x0, c0, c1, m, cfg)

    save_image(result.composited, args.output)
    if args.raw_output:
        save_image(result.warped, args.raw_output)
    if args.dump_keys:
        save_tensor(keys_to_tensor(result.warp.keys, result.warp.weights), args.dump_keys)

    emit(
        {
            "command": "warp",
            "output": str(Path(args.output)),
            "height": x0.height,
            "width": x0.width,
            "keys_per_query": result.warp.keys.size,
            "evaluations": result.evaluations,
            "editable_pixels": int(m.editable.sum()),
        }
    )
    return EXIT_OK


def run_dense_warp(args: argparse.Namespace) -> int:
    cfg = build_pipeline_config(args)
    x0, c0, c1, m = load_inputs(args)
    u_x, u_c = resolve_features(x0, c0, c1, cfg)
    result = dense_warp(x0, u_x, u_c, cfg.attention)
    output = composite_local(result.warped, x0, m) if args.mask else result.warped
    save_image(output, args.output)
    emit(
        {
            "command": "dense-warp",
            "output": str(Path(args.output)),
            "height": x0.height,
            "width": x0.width,
            "evaluations": result.evaluations,
        }
    )
    return EXIT_OK


def run_sample_keys(args: argparse.Namespace) -> int:
    cfg = build_pipeline_config(args)
    x0, c0, c1, m = load_inputs(args, require_mask=cfg.reconstruction_mode)
    u_x, u_c = resolve_features(x0, c0, c1, cfg)
    sc = cfg.constraints(c0, c1, m)

    sampling = sample_key_indices(u_x, u_c, cfg.sampler, sc)
    keys = dedupe_keys(sampling.keys) if cfg.dedupe else sampling.keys
    weights = sparse_attention_field(u_c, u_x, keys, cfg.attention, sc)
    save_tensor(keys_to_tensor(keys, weights), args.dump_keys)
    emit(
        {
            "command": "sample-keys",
            "dump": str(Path(args.dump_keys)),
            "keys_per_query": keys.size,
            "mean_live_keys": float(keys.valid.sum(axis=-1).mean()),
            "evaluations": sampling.evaluations,
        }
    )
    return EXIT_OK


def run_cycle_loss(args: argparse.Namespace) -> int:
    cfg = build_pipeline_config(args)
    x0, c0, c1, _ = load_inputs(args)
    u_x, u_c = resolve_features(x0, c0, c1, cfg)
    x_low = downsample_area(x0, args.downsample)
    loss = cycle_loss(x_low, downsample_area(u_x, args.downsample), downsample_area(u_c, args.downsample), cfg.attention)
    emit({"command": "cycle-loss", "height": x_low.height, "width": x_low.width, "cycle_loss": loss})
    return EXIT_OK


def run_synth_dataset(args: argparse.Namespace) -> int:
    if args.count < 0:
        raise ArgumentError("--count must be >= 0")
    synth_cfg = SynthConfig(hull_ratio_gate=args.hull_ratio_gate, max_iters=args.max_iters)
    seed = args.seed if args.seed is not None else config[args.preset].settings()["seed"]
    if seed < 0:
        raise ArgumentError("--seed must be >= 0")
    x = load_image(args.image)
    c = load_label_map(args.labels)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    # records.jsonl is rebuilt on every run
    (out_dir / RECORDS_FILE).unlink(missing_ok=True)

    written = 0
    for index in range(args.count):
        pair = synth_manipulation_pair(x, c, seed + index, cfg=synth_cfg)
        if pair is None:
            continue
        print(json.dumps(write_pair(out_dir, index, pair), sort_keys=True))
        written += 1
    logger.info("synthesised %d of %d pairs into %s", written, args.count, out_dir)
    return EXIT_OK


def run_bench_command(args: argparse.Namespace) -> int:
    cfg = build_pipeline_config(args)
    report = run_bench(
        args.sizes,
        cfg.sampler,
        dense_sizes=args.dense_sizes,
        attention=cfg.attention,
        channels=args.channels,
    )
    lines = report.to_json_lines()
    if args.output:
        target = Path(args.output)
        try:
            target.write_text(lines, encoding="utf-8")
        except OSError as exc:
            raise RuntimeError(f"Failed to write bench report '{target}': {exc}") from exc
    else:
        sys.stdout.write(lines)
    return EXIT_OK


__all__ = ["build_pipeline_config", "main", "parse_args"]
