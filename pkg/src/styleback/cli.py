"""Subcommand CLI tying the modules into the three experiment
configurations plus the self-contained synthetic `toy` profile.

Exit codes: 0 success, 2 config/argument error, 3 runtime failure with
partial outputs preserved.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import cyclegan as cg
from .config import (
    EXPERIMENT_BACKENDS,
    ExperimentConfig,
    load_config,
    validate_config,
)
from .data import (
    SceneRecord,
    SyntheticSceneSpec,
    load_dataset,
    read_image_png,
    read_mask_png,
    read_score_map_png,
    synthesize_scene,
)
from .exceptions import ArgumentError, ConfigError, StylebackError
from .features import ExtractorSpec, tiny_spec, vgg19_spec
from .figures import render_grid, save_grid
from .nst import NSTParams, nst_optimize, save_stylized, style_weight_sweep, write_loss_trace_csv
from .pipeline import (
    BackendChoice,
    CycleGANBackendConfig,
    NSTBackendConfig,
    run_batch,
    run_pipeline,
)
from .report import (
    ExperimentReport,
    aggregate_metrics,
    build_report,
    compute_scene_metrics,
    config_snapshot_hash,
    write_report,
)

DEFAULT_SWEEP_WEIGHTS = (1e5, 1e6, 1e7, 1e8)
FIGURE_COLUMNS = ("original", "stylized", "reconstruction", "score map")
MAX_FIGURE_ROWS = 8


# ---------------------------------------------------------------------------
# Config-to-object builders

def _extractor_spec(config: ExperimentConfig) -> ExtractorSpec:
    if config.nst.extractor == "tiny_test":
        return tiny_spec(seed=config.seed)
    if config.nst.extractor == "pretrained_vgg19":
        return vgg19_spec(weights_path=config.nst.vgg19_weights,
                          weights_sha256=config.nst.vgg19_sha256)
    raise ConfigError(f"unknown extractor {config.nst.extractor!r}")


def _nst_params(config: ExperimentConfig, iterations: int | None = None,
                style_weight: float | None = None) -> NSTParams:
    section = config.nst
    return NSTParams(
        extractor=_extractor_spec(config),
        content_weight=section.content_weight,
        style_weight=section.style_weight if style_weight is None else style_weight,
        iterations=section.iterations if iterations is None else iterations,
        step_size=section.step_size,
        init=section.init,
        seed=config.seed,
    )


def _toy_scenes(config: ExperimentConfig) -> list[SceneRecord]:
    toy = config.toy
    patterns = ("gradient", "checker", "stripes")
    shapes = ("square", "disk")
    scenes = []
    for i in range(toy.n_scenes):
        spec = SyntheticSceneSpec(
            base_pattern=patterns[i % len(patterns)],
            anomaly_shape=shapes[i % len(shapes)],
            anomaly_fraction=toy.anomaly_fraction,
            seed=config.seed + i,
            height=toy.image_size,
            width=toy.image_size,
        )
        scenes.append(synthesize_scene(spec))
    return scenes


def _toy_backend(config: ExperimentConfig) -> BackendChoice:
    """nst/nst over the tiny extractor with synthetic style guidance images."""
    toy = config.toy
    forward_style = synthesize_scene(SyntheticSceneSpec(
        "stripes", "none", seed=config.seed + 9001,
        height=toy.image_size, width=toy.image_size)).image
    # anomaly-free scene image: style guidance only, mirrors the backward pass
    backward_style = synthesize_scene(SyntheticSceneSpec(
        "gradient", "none", seed=config.seed + 9002,
        height=toy.image_size, width=toy.image_size)).image
    params = NSTParams(
        extractor=tiny_spec(seed=config.seed),
        content_weight=config.nst.content_weight,
        style_weight=toy.style_weight,
        iterations=toy.iterations,
        step_size=config.nst.step_size,
        init="content",
        seed=config.seed,
    )
    return BackendChoice(
        forward="nst",
        forward_config=NSTBackendConfig(params, forward_style),
        backward="nst",
        backward_config=NSTBackendConfig(params, backward_style),
    )


def _identity_backend(scene: SceneRecord, config: ExperimentConfig) -> BackendChoice:
    """NST fixed point: style = content, content init -> exact identity."""
    params = NSTParams(
        extractor=tiny_spec(seed=config.seed),
        iterations=1,
        seed=config.seed,
    )
    nst_config = NSTBackendConfig(params, scene.image)
    return BackendChoice("nst", nst_config, "nst", nst_config)


def _build_backend(config: ExperimentConfig) -> BackendChoice:
    forward_kind, backward_kind = config.backends
    if forward_kind == "nst":
        forward = NSTBackendConfig(_nst_params(config),
                                   read_image_png(config.nst.forward_style))
    else:
        forward = CycleGANBackendConfig(
            cg.load_checkpoint(config.cyclegan.forward_checkpoint),
            config.cyclegan.forward_direction,
        )
    if backward_kind == "nst":
        backward = NSTBackendConfig(_nst_params(config),
                                    read_image_png(config.nst.backward_style))
    else:
        backward = CycleGANBackendConfig(
            cg.load_checkpoint(config.cyclegan.backward_checkpoint),
            config.cyclegan.backward_direction,
        )
    return BackendChoice(forward_kind, forward, backward_kind, backward)


def _toy_domains(config: ExperimentConfig):
    """Two synthetic unpaired domains for the desk-scale CycleGAN task."""
    toy = config.toy
    size = config.cyclegan.train.image_size
    n = toy.n_train_images
    n_eval = max(1, n // 5)

    def domain(pattern: str, offset: int) -> list[SceneRecord]:
        return [
            synthesize_scene(SyntheticSceneSpec(
                pattern, "none", seed=config.seed + offset + i,
                height=size, width=size), split_tag="train")
            for i in range(n)
        ]

    source = domain("checker", 100_000)
    target = domain("gradient", 200_000)
    return (source[n_eval:], target[n_eval:], source[:n_eval], target[:n_eval])


# ---------------------------------------------------------------------------
# Subcommands

def cmd_stylize(args) -> int:
    config = _config_from_args(args)
    content = read_image_png(args.content)
    style_path = args.style or config.nst.forward_style
    if style_path is None or not Path(style_path).is_file():
        raise ConfigError(f"style image not found: {style_path}")
    style = read_image_png(style_path)
    params = _nst_params(config, style_weight=args.style_weight)
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = nst_optimize(content, style, params)
    png = out_dir / f"{Path(args.content).stem}_stylized.png"
    save_stylized(result, params, png)
    write_loss_trace_csv(result, png.with_name(png.stem + "_trace.csv"))
    print(f"stylize: wrote {png} (best total loss {result.best_total_loss:.6g})")
    return 0


def cmd_sweep(args) -> int:
    config = _config_from_args(args)
    content = read_image_png(args.content)
    style_path = args.style or config.nst.forward_style
    if style_path is None or not Path(style_path).is_file():
        raise ConfigError(f"style image not found: {style_path}")
    style = read_image_png(style_path)
    weights = [float(w) for w in args.weights.split(",")] if args.weights \
        else list(DEFAULT_SWEEP_WEIGHTS)
    base = _nst_params(config)
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results = style_weight_sweep(content, style, base, weights)
    for weight, result in zip(weights, results):
        params = replace(base, style_weight=weight)
        png = out_dir / f"{Path(args.content).stem}_sw{weight:g}.png"
        save_stylized(result, params, png)
        final = result.loss_trace[-1]
        print(f"sweep: style_weight={weight:g} -> {png} "
              f"(final content loss {final.content_loss:.6g})")
    return 0


def cmd_train(args) -> int:
    config = _config_from_args(args)
    section = config.cyclegan.train
    group_id = args.group or section.group
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if group_id == "toy":
        train_a, train_b, eval_a, eval_b = _toy_domains(config)
        group = cg.group_config(
            "toy",
            epochs=args.epochs if args.epochs is not None else config.toy.train_epochs,
            batch_size=section.batch_size, learning_rate=section.learning_rate,
            lambda_cycle=section.lambda_cycle, lambda_identity=section.lambda_identity,
            seed=config.seed,
            arch=cg.ArchSpec(section.base_channels, section.n_residual_blocks,
                             section.image_size),
        )
        baseline = cg.build_model(group.arch, group.seed, "toy")
        pre = 0.5 * (cg.mean_cycle_loss(baseline, eval_a, "a")
                     + cg.mean_cycle_loss(baseline, eval_b, "b"))
        model = cg.train(group, train_a, train_b, checkpoint_dir=out_dir,
                         checkpoint_every=section.checkpoint_every,
                         log_path=out_dir / "training_log.csv")
        post = 0.5 * (cg.mean_cycle_loss(model, eval_a, "a")
                      + cg.mean_cycle_loss(model, eval_b, "b"))
        print(f"train[toy]: eval cycle loss {pre:.4f} (untrained) -> {post:.4f}")
        return 0

    source, target = _load_training_domains(config, group_id)
    group = cg.group_config(
        group_id,
        epochs=args.epochs if args.epochs is not None else section.epochs,
        batch_size=section.batch_size, learning_rate=section.learning_rate,
        lambda_cycle=section.lambda_cycle, lambda_identity=section.lambda_identity,
        seed=config.seed,
        arch=cg.ArchSpec(section.base_channels, section.n_residual_blocks,
                         section.image_size),
        source_path=section.source_root, target_path=section.target_root,
    )
    cg.train(group, source, target, checkpoint_dir=out_dir,
             checkpoint_every=section.checkpoint_every,
             log_path=out_dir / "training_log.csv")
    print(f"train[{group_id}]: checkpoints in {out_dir}")
    return 0


def _load_training_domains(config: ExperimentConfig, group_id: str):
    section = config.cyclegan.train
    if section.target_root is None:
        raise ConfigError("cyclegan.train.target_root is required for real groups")
    target = [r for r in load_dataset(section.target_root, section.dataset_layout)]
    if section.source_root is not None:
        source = [r for r in load_dataset(section.source_root, section.dataset_layout)]
    elif group_id in ("E", "F") and config.nst.forward_style:
        # stylized-source groups: generate the source domain by running the
        # forward transfer over the target data
        style = read_image_png(config.nst.forward_style)
        params = _nst_params(config)
        source = []
        for record in target:
            result = nst_optimize(record.image, style, params)
            source.append(SceneRecord(f"stylized-{record.scene_id}", result.output,
                                      None, record.split_tag))
    else:
        raise ConfigError(
            "cyclegan.train.source_root is required (groups E/F can instead "
            "set nst.forward_style to self-generate the stylized source)"
        )
    return source, target


def cmd_run(args) -> int:
    config = _config_from_args(args)
    validate_config(config)
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if config.experiment == "toy":
        scenes = _toy_scenes(config)
    else:
        records = load_dataset(config.dataset_root, config.dataset_layout)
        scenes = [r for r in records if r.split_tag == "eval"]
    if config.max_scenes is not None:
        scenes = scenes[:config.max_scenes]
    if not scenes:
        raise ConfigError("no scenes to process")

    failures = []
    if config.experiment == "toy" and config.toy.identity_smoke:
        artifacts = []
        for scene in scenes:
            artifacts.append(run_pipeline(scene, _identity_backend(scene, config),
                                          out_dir / "scenes", config.score_metric,
                                          config.blur_radius))
        backend_descriptor = {"forward": {"kind": "nst", "identity": True},
                              "backward": {"kind": "nst", "identity": True}}
    else:
        backend = _toy_backend(config) if config.experiment == "toy" \
            else _build_backend(config)
        artifacts, failures = run_batch(scenes, backend, out_dir / "scenes",
                                        config.score_metric, config.blur_radius,
                                        jobs=config.jobs)
        backend_descriptor = backend.describe()

    masks = {s.scene_id: s.mask for s in scenes}
    report = build_report(config.experiment, artifacts, masks,
                          backend_descriptor, config.to_dict())
    report_path = write_report(report, out_dir / "report.json")

    mask_by_id = {s.scene_id: s.mask for s in scenes}
    for start in range(0, len(artifacts), MAX_FIGURE_ROWS):
        chunk = artifacts[start:start + MAX_FIGURE_ROWS]
        rows = [[a.original, a.stylized, a.reconstruction, a.score_map] for a in chunk]
        grid = render_grid(
            rows,
            row_labels=[a.scene_id for a in chunk],
            col_labels=list(FIGURE_COLUMNS),
            highlight_masks=[mask_by_id.get(a.scene_id) for a in chunk],
            highlight_columns=(0, 2),
        )
        save_grid(grid, out_dir / f"{config.experiment}_fig{start // MAX_FIGURE_ROWS + 1}.png")

    for scene in report.scenes:
        print(f"run: {scene.scene_id} auroc={scene.auroc:.4f} "
              f"ap={scene.average_precision:.4f} contrast={scene.contrast_ratio:.4f} "
              f"noise={scene.noise_level:.4f}")
    for exclusion in report.exclusions:
        print(f"run: excluded {exclusion['scene_id']}: {exclusion['reason']}")
    for warning in report.warnings:
        print(f"run: warning: {warning}")
    print(f"run: report at {report_path}")
    if failures:
        for failure in failures:
            print(f"run: failed scene {failure.scene_id} at stage {failure.stage}",
                  file=sys.stderr)
        return 3
    return 0


def cmd_evaluate(args) -> int:
    score_dir = Path(args.scores)
    mask_dir = Path(args.masks)
    if not score_dir.is_dir():
        raise ConfigError(f"score directory does not exist: {score_dir}")
    if not mask_dir.is_dir():
        raise ConfigError(f"mask directory does not exist: {mask_dir}")
    out_dir = Path(args.output or "styleback-out")
    out_dir.mkdir(parents=True, exist_ok=True)

    scene_metrics = []
    exclusions = []
    for score_path in sorted(score_dir.glob("*.png")):
        scene_id = score_path.stem
        mask_path = mask_dir / score_path.name
        if not mask_path.is_file():
            exclusions.append({"scene_id": scene_id, "reason": "no mask"})
            continue
        score_map = read_score_map_png(score_path)
        mask = read_mask_png(mask_path)
        try:
            scene_metrics.append(compute_scene_metrics(scene_id, score_map, mask))
        except StylebackError as exc:
            exclusions.append({"scene_id": scene_id, "reason": str(exc)})

    snapshot = {"scores": str(score_dir), "masks": str(mask_dir)}
    report = ExperimentReport(
        experiment_id="evaluate",
        backend={},
        scenes=scene_metrics,
        aggregates=aggregate_metrics(scene_metrics),
        exclusions=exclusions,
        config_snapshot=snapshot,
        config_hash=config_snapshot_hash(snapshot),
        warnings=[] if scene_metrics else ["no scorable scenes"],
    )
    report_path = write_report(report, out_dir / "report.json")
    for scene in scene_metrics:
        print(f"evaluate: {scene.scene_id} auroc={scene.auroc:.4f} "
              f"ap={scene.average_precision:.4f}")
    for exclusion in exclusions:
        print(f"evaluate: excluded {exclusion['scene_id']}: {exclusion['reason']}")
    print(f"evaluate: report at {report_path}")
    return 0


def cmd_figure(args) -> int:
    artifacts_dir = Path(args.artifacts)
    if not artifacts_dir.is_dir():
        raise ConfigError(f"artifacts directory does not exist: {artifacts_dir}")
    scene_dirs = sorted(d for d in artifacts_dir.iterdir()
                        if d.is_dir() and (d / "original.png").is_file())
    if not scene_dirs:
        raise ConfigError(f"no scene artifacts under {artifacts_dir}")
    rows, labels = [], []
    for scene_dir in scene_dirs[:MAX_FIGURE_ROWS]:
        rows.append([
            read_image_png(scene_dir / "original.png"),
            read_image_png(scene_dir / "stylized.png"),
            read_image_png(scene_dir / "reconstruction.png"),
            read_score_map_png(scene_dir / "score_map.png"),
        ])
        labels.append(scene_dir.name)
    grid = render_grid(rows, row_labels=labels, col_labels=list(FIGURE_COLUMNS))
    out_path = Path(args.output or (artifacts_dir / "figure.png"))
    save_grid(grid, out_path)
    print(f"figure: wrote {out_path}")
    return 0


# ---------------------------------------------------------------------------
# Parser plumbing

def _config_from_args(args) -> ExperimentConfig:
    overrides = {
        "seed": getattr(args, "seed", None),
        "jobs": getattr(args, "jobs", None),
        "output_dir": getattr(args, "output", None),
        "experiment": getattr(args, "experiment", None),
    }
    return load_config(getattr(args, "config", None), overrides)


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--seed", type=int, help="global seed override")
    parser.add_argument("--jobs", type=int, help="scene-level parallelism cap")
    parser.add_argument("--output", help="output directory override")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="styleback",
        description="Forward-backward style-transfer reconstruction with "
                    "pixelwise anomaly scoring",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stylize", help="forward NST for a single image")
    _add_common(p)
    p.add_argument("--content", required=True, help="content image (PNG)")
    p.add_argument("--style", help="style image (PNG); falls back to config")
    p.add_argument("--style-weight", type=float, dest="style_weight")
    p.set_defaults(func=cmd_stylize)

    p = sub.add_parser("sweep", help="forward NST across a style-weight ladder")
    _add_common(p)
    p.add_argument("--content", required=True)
    p.add_argument("--style")
    p.add_argument("--weights", help="comma-separated, default 1e5,1e6,1e7,1e8")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("train", help="train a CycleGAN data group")
    _add_common(p)
    p.add_argument("--group", help="A-F or 'toy'")
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("run", help="full pipeline + report + figures")
    _add_common(p)
    p.add_argument("--experiment",
                   choices=list(EXPERIMENT_BACKENDS), help="experiment profile override")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("evaluate", help="metrics over precomputed score maps")
    p.add_argument("--scores", required=True, help="directory of score-map PNGs")
    p.add_argument("--masks", required=True, help="directory of mask PNGs")
    p.add_argument("--output", help="output directory")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("figure", help="compose a grid from saved artifacts")
    p.add_argument("--artifacts", required=True, help="scenes directory from `run`")
    p.add_argument("--output", help="output PNG path")
    p.set_defaults(func=cmd_figure)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (ConfigError, ArgumentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except StylebackError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
