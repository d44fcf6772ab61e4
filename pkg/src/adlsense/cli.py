"""Command-line entry point.

Subcommands: ``calibrate`` fits gate thresholds and the unseen threshold from
labeled sessions; ``run`` replays a session into decision and event logs;
``eval`` computes the evaluation battery over prediction files; ``space`` and
``weights`` inspect and manage the persisted artifacts.

Flag values override the config file (``--config`` or ``$ADLSENSE_CONFIG``),
which overrides built-in defaults. Diagnostics go to stderr; logs and reports
go only to the declared output paths. Exit code 0 means no errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .assist import load_behavior_table
from .errors import PipelineError
from .evaluation import (
    compute_metrics,
    correctness_matrix,
    discordant_counts,
    friedman_test,
    load_labels,
    load_predictions,
    mcnemar_test,
)
from .features import ProjectionConfig
from .fusion import PipelineConfig, load_weights, random_weights, store_weights
from .motion import save_thresholds
from .pipeline import (
    CalibrationConfig,
    calibrate,
    make_provider,
    run_session,
    write_decision_log,
    write_event_log,
)
from .report import write_report
from .skeleton import SamplerConfig, load_session
from .space import DecisionPolicy, load_space, save_space

CONFIG_ENV = "ADLSENSE_CONFIG"


def _load_config(path: str | None) -> dict:
    if path is None:
        path = os.environ.get(CONFIG_ENV)
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _resolve(flag_value, config: dict, key: str, default=None):
    if flag_value is not None:
        return flag_value
    if key in config:
        return config[key]
    return default


def _sampler_config(args, config: dict) -> SamplerConfig:
    section = config.get("sampler", {})
    return SamplerConfig(
        input_rate=float(_resolve(args.input_rate, section, "input_rate", 30.0)),
        sample_stride=int(_resolve(args.stride, section, "sample_stride", 6)),
        window_len=int(_resolve(args.window_len, section, "window_len", 16)),
        emit_every=int(_resolve(args.emit_every, section, "emit_every", 1)),
    )


def _camera(config: dict) -> ProjectionConfig:
    section = config.get("camera", {})
    return ProjectionConfig(
        center_x=float(section.get("center_x", 0.0)),
        center_y=float(section.get("center_y", 1.0)),
        extent_x=float(section.get("extent_x", 4.0)),
        extent_y=float(section.get("extent_y", 4.0)),
    )


def _provider(args, config: dict):
    kind = _resolve(args.provider, config, "provider", "synthetic")
    features_dir = _resolve(getattr(args, "features_dir", None), config, "features_dir")
    return make_provider(kind, camera=_camera(config), features_dir=features_dir)


def _require_file(path, what: str) -> Path:
    if path is None:
        raise PipelineError(f"missing required {what} path")
    p = Path(path)
    if not p.exists():
        raise PipelineError(f"{what} file not found: {p}")
    return p


def _add_sampler_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--stride", type=int, help="retain every Nth input frame (default 6)")
    parser.add_argument("--window-len", type=int, dest="window_len",
                        help="samples per window (default 16)")
    parser.add_argument("--emit-every", type=int, dest="emit_every",
                        help="emit a window every N retained samples (default 1)")
    parser.add_argument("--input-rate", type=float, dest="input_rate",
                        help="input frame rate in FPS (default 30)")


def cmd_calibrate(args) -> int:
    config = _load_config(args.config)
    weights_path = _require_file(_resolve(args.weights, config, "weights"), "weights")
    labels_path = _require_file(_resolve(args.labels, config, "labels"), "labels")
    out_dir = Path(_resolve(args.out, config, "out", "calibration"))
    out_dir.mkdir(parents=True, exist_ok=True)

    weights = load_weights(weights_path)
    samples = load_labels(labels_path)
    if not samples:
        raise PipelineError("labels file lists no sessions")
    class_names = sorted({s.true_class for s in samples})
    class_ids = {name: i for i, name in enumerate(class_names)}

    policy = DecisionPolicy(tau_unseen=args.policy_tau) if args.policy_tau else DecisionPolicy()
    calib_cfg = CalibrationConfig(
        percentile_lo=args.percentile_lo,
        percentile_hi=args.percentile_hi,
        margin_lo=args.margin_lo,
        margin_hi=args.margin_hi,
        tau_percentile=args.tau_percentile,
        tau_margin=args.tau_margin,
        seed=args.seed if args.seed is not None else 0,
    )
    result = calibrate(
        samples,
        class_ids,
        _sampler_config(args, config),
        weights,
        _provider(args, config),
        user_id=args.user,
        policy=policy,
        config=calib_cfg,
    )
    for warning in result.warnings:
        print(f"warning: {warning}", file=sys.stderr)

    save_thresholds(result.gate, out_dir / "thresholds.json")
    save_space(result.space, out_dir / "space.json")
    print(
        f"calibrated gate ({result.gate.m_min:.4f}, {result.gate.m_max:.4f}) "
        f"and tau_unseen {result.policy.tau_unseen:.4f} "
        f"over {sum(result.window_counts.values())} windows",
        file=sys.stderr,
    )
    if result.warnings and args.strict:
        return 1
    return 0


def cmd_run(args) -> int:
    config = _load_config(args.config)
    weights_path = _require_file(_resolve(args.weights, config, "weights"), "weights")
    space_path = _require_file(_resolve(args.space, config, "space"), "space")
    session_path = _require_file(_resolve(args.session, config, "session"), "session")
    out_dir = Path(_resolve(args.out, config, "out", "run"))
    out_dir.mkdir(parents=True, exist_ok=True)

    weights = load_weights(weights_path)
    space = load_space(space_path)
    if space.gate is None:
        raise PipelineError(f"{space_path}: space has no calibrated gate thresholds")
    if args.policy_tau is not None:
        space.policy = DecisionPolicy(
            tau_unseen=args.policy_tau,
            atypical_z=space.policy.atypical_z,
            min_history=space.policy.min_history,
            epsilon=space.policy.epsilon,
            min_class_count=space.policy.min_class_count,
        )
    behaviors_path = _resolve(args.behaviors, config, "behaviors")
    behaviors = load_behavior_table(_require_file(behaviors_path, "behavior table")) \
        if behaviors_path else None

    frames = load_session(session_path)
    result = run_session(
        frames,
        _sampler_config(args, config),
        space.gate,
        space,
        weights=weights,
        provider=_provider(args, config),
        behaviors=behaviors,
        cooldown=float(_resolve(args.cooldown, config, "cooldown", 10.0)),
        features_out=args.features_out,
    )
    write_decision_log(result, out_dir / "decisions.jsonl")
    write_event_log(result, out_dir / "events.jsonl")
    if args.save_space:
        save_space(space, space_path)
    if args.figures:
        from .plots import render_run_figures

        render_run_figures(
            [o.decision_record() for o in result.outcomes], out_dir / "figures"
        )
    counts: dict[str, int] = {}
    for outcome in result.outcomes:
        counts[outcome.decision.adl_type.value] = (
            counts.get(outcome.decision.adl_type.value, 0) + 1
        )
    print(
        f"processed {len(result.outcomes)} windows: "
        + ", ".join(f"{k}={v}" for k, v in sorted(counts.items())),
        file=sys.stderr,
    )
    return 0


def cmd_eval(args) -> int:
    config = _load_config(args.config)
    labels_path = _require_file(_resolve(args.labels, config, "labels"), "labels")
    truth = load_labels(labels_path)
    prediction_sets = [load_predictions(_require_file(p, "predictions")) for p in args.predictions]

    metrics = {}
    for pred in prediction_sets:
        metrics[pred.method_name] = compute_metrics(truth, pred, averaging=args.averaging)

    friedman = None
    if len(prediction_sets) >= 2 and len(truth) >= 2:
        friedman = friedman_test(correctness_matrix(truth, prediction_sets))
    mcnemar = {}
    for i, a in enumerate(prediction_sets):
        for b in prediction_sets[i + 1 :]:
            only_a, only_b = discordant_counts(truth, a, b)
            mcnemar[f"{a.method_name} vs {b.method_name}"] = mcnemar_test(only_a, only_b)

    rates = None
    if args.rates:
        with open(_require_file(args.rates, "rates"), "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        rates = {
            group: [(int(s), int(a)) for s, a in rows] for group, rows in raw.items()
        }

    out = _resolve(args.out, config, "out", "report")
    written = write_report(
        out, metrics, friedman=friedman, mcnemar=mcnemar or None,
        rates=rates, figures=args.figures,
    )
    print("wrote " + ", ".join(str(p) for p in written), file=sys.stderr)
    return 0


def cmd_space_show(args) -> int:
    space = load_space(_require_file(args.space, "space"))
    print(f"user: {space.user_id}")
    print(f"dimension: {space.dim}")
    print(f"policy: tau_unseen={space.policy.tau_unseen:.4f} "
          f"atypical_z={space.policy.atypical_z} min_history={space.policy.min_history}")
    if space.gate is not None:
        print(f"gate: ({space.gate.m_min:.4f}, {space.gate.m_max:.4f})")
    print(f"history entries: {len(space.s_history)}")
    print("classes:")
    for class_id in space.class_ids:
        stats = space.stats[class_id]
        print(
            f"  [{class_id}] {space.label_for(class_id)}: n={stats.count} "
            f"mean_dist={stats.mean_dist:.4f} variance={stats.variance:.4f}"
        )
    return 0


def cmd_space_export(args) -> int:
    space = load_space(_require_file(args.space, "space"))
    save_space(space, args.out)
    print(f"wrote {args.out}", file=sys.stderr)
    return 0


def cmd_weights_init(args) -> int:
    cfg = PipelineConfig(num_classes=args.classes)
    weights = random_weights(
        args.seed,
        conv2d_channels=args.conv2d_channels,
        conv1d_channels=args.conv1d_channels,
        pipeline=cfg,
    )
    store_weights(weights, args.out)
    print(f"wrote {args.out} (seed {args.seed})", file=sys.stderr)
    return 0


def cmd_weights_show(args) -> int:
    weights = load_weights(_require_file(args.weights, "weights"))
    print(f"pipeline: {json.dumps(weights.pipeline.to_dict(), sort_keys=True)}")
    for name in (
        "conv2d_kernel", "conv2d_bias", "conv1d_kernel", "conv1d_bias",
        "dense_embed_w", "dense_embed_b", "dense_head_w", "dense_head_b",
    ):
        arr = getattr(weights, name)
        print(f"{name}: shape={tuple(arr.shape)} |mean|={float(np.abs(arr).mean()):.5f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adlsense",
        description="Streaming open-set recognition of activities of daily living",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="fit gate thresholds and the unseen threshold")
    p.add_argument("--config", help=f"config file (default ${CONFIG_ENV})")
    p.add_argument("--labels", help="labeled sessions file (jsonl)")
    p.add_argument("--weights", help="fusion weights file")
    p.add_argument("--out", help="output directory (default ./calibration)")
    p.add_argument("--user", default="default", help="user id for the embedding space")
    p.add_argument("--provider", choices=["synthetic", "files"])
    p.add_argument("--features-dir", dest="features_dir")
    p.add_argument("--policy-tau", type=float, dest="policy_tau",
                   help="fallback unseen threshold before calibration")
    p.add_argument("--percentile-lo", type=float, default=1.0)
    p.add_argument("--percentile-hi", type=float, default=99.0)
    p.add_argument("--margin-lo", type=float, default=0.9)
    p.add_argument("--margin-hi", type=float, default=1.1)
    p.add_argument("--tau-percentile", type=float, default=99.0)
    p.add_argument("--tau-margin", type=float, default=1.0)
    p.add_argument("--seed", type=int, help="holdout-split seed")
    p.add_argument("--strict", action="store_true",
                   help="exit nonzero when calibration is degenerate")
    _add_sampler_flags(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("run", help="replay a session into decision and event logs")
    p.add_argument("--config", help=f"config file (default ${CONFIG_ENV})")
    p.add_argument("--session", help="session file to replay")
    p.add_argument("--weights", help="fusion weights file")
    p.add_argument("--space", help="embedding-space snapshot")
    p.add_argument("--behaviors", help="behavior table file")
    p.add_argument("--provider", choices=["synthetic", "files"])
    p.add_argument("--features-dir", dest="features_dir",
                   help="directory of exported feature bundles (provider=files)")
    p.add_argument("--features-out", dest="features_out",
                   help="dump computed feature bundles to this directory")
    p.add_argument("--policy-tau", type=float, dest="policy_tau",
                   help="override the unseen threshold")
    p.add_argument("--cooldown", type=float, help="event cooldown in seconds (default 10)")
    p.add_argument("--out", help="output directory (default ./run)")
    p.add_argument("--save-space", action="store_true", dest="save_space",
                   help="write the updated space back after the run")
    p.add_argument("--figures", action="store_true", help="render session timeline figures")
    _add_sampler_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="compute evaluation metrics over prediction files")
    p.add_argument("--config", help=f"config file (default ${CONFIG_ENV})")
    p.add_argument("--labels", help="labels file (jsonl)")
    p.add_argument("--out", help="report path stem (default ./report)")
    p.add_argument("--averaging", choices=["macro", "micro"], default="macro")
    p.add_argument("--rates", help="success-rate counts file (json)")
    p.add_argument("--figures", action="store_true", help="render report figures")
    p.add_argument("predictions", nargs="+", help="prediction files")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("space", help="inspect or export embedding spaces")
    space_sub = p.add_subparsers(dest="space_command", required=True)
    q = space_sub.add_parser("show", help="print a space summary")
    q.add_argument("--space", required=True)
    q.set_defaults(func=cmd_space_show)
    q = space_sub.add_parser("export", help="re-encode a space canonically")
    q.add_argument("--space", required=True)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_space_export)

    p = sub.add_parser("weights", help="create or inspect fusion weights")
    weights_sub = p.add_subparsers(dest="weights_command", required=True)
    q = weights_sub.add_parser("init", help="write seeded random weights")
    q.add_argument("--out", required=True)
    q.add_argument("--seed", type=int, required=True)
    q.add_argument("--conv2d-channels", type=int, default=64, dest="conv2d_channels")
    q.add_argument("--conv1d-channels", type=int, default=128, dest="conv1d_channels")
    q.add_argument("--classes", type=int, default=11)
    q.set_defaults(func=cmd_weights_init)
    q = weights_sub.add_parser("show", help="print weight shapes and pipeline config")
    q.add_argument("--weights", required=True)
    q.set_defaults(func=cmd_weights_show)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
