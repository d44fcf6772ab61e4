"""End-to-end session replay: sampler -> motion gate -> features -> fusion ->
user-state estimation -> assistive events. Also hosts the calibration
procedure that fits gate thresholds and the unseen threshold from labeled
sessions.

Replay is sequential per session so history and cooldown semantics hold;
separate sessions may run in parallel processes against read-only artifacts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .assist import AssistEvent, BehaviorState, BehaviorTable, select_behavior
from .errors import PipelineError, ValidationError
from .evaluation import LabeledSample
from .features import (
    FeatureBundle,
    ProjectionConfig,
    load_feature_bundle,
    synthetic_features,
)
from .fusion import FusionWeights, classify_head, embed_bundle
from .motion import (
    GateThresholds,
    average_motion,
    calibrate_thresholds,
    classify_motion,
    compute_motion_embedding,
)
from .skeleton import SkeletonFrame, SamplerConfig, SampleWindow, load_session, sample_windows
from .space import AdlDecision, DecisionPolicy, EmbeddingSpace, init_space

FEATURE_FILE_PATTERN = "window_{index:05d}.features"

Provider = Callable[[SampleWindow], FeatureBundle]


class StageError(PipelineError):
    """Wraps a module error with the pipeline stage where it occurred."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        super().__init__(f"stage={stage}: {cause}")


def feature_file_path(directory, window_index: int) -> Path:
    return Path(directory) / FEATURE_FILE_PATTERN.format(index=window_index)


def make_provider(
    kind: str,
    camera: ProjectionConfig | None = None,
    features_dir=None,
) -> Provider:
    """Build a feature provider: deterministic synthetic or exported files."""
    if kind == "synthetic":
        cam = camera or ProjectionConfig()
        return lambda window: synthetic_features(window, cam)
    if kind == "files":
        if features_dir is None:
            raise ValidationError("provider 'files' needs a features directory")
        directory = Path(features_dir)

        def from_files(window: SampleWindow) -> FeatureBundle:
            path = feature_file_path(directory, window.window_index)
            if not path.exists():
                raise ValidationError(
                    f"no feature file for window {window.window_index}: {path}"
                )
            bundle = load_feature_bundle(path)
            if bundle.window_index != window.window_index:
                raise ValidationError(
                    f"{path}: declares window {bundle.window_index}, "
                    f"expected {window.window_index}"
                )
            return bundle

        return from_files
    raise ValidationError(f"unknown provider {kind!r} (expected 'synthetic' or 'files')")


@dataclass
class WindowOutcome:
    """Everything the pipeline derived from one window."""

    window: SampleWindow
    motion: np.ndarray
    motion_average: float
    decision: AdlDecision
    event: AssistEvent | None = None
    embedding: np.ndarray | None = None
    task_probs: np.ndarray | None = None
    bundle: FeatureBundle | None = None

    def decision_record(self) -> dict:
        record = self.decision.to_record()
        record["window_index"] = self.window.window_index
        record["motion_average"] = self.motion_average
        record["motion_embedding"] = [float(v) for v in self.motion]
        return record


def process_window(
    window: SampleWindow,
    gate: GateThresholds,
    space: EmbeddingSpace,
    weights: FusionWeights | None,
    provider: Provider | None,
    record: bool = True,
) -> WindowOutcome:
    """Run one window through the gate and, if it passes, the full stack."""
    try:
        motion = compute_motion_embedding(window)
        motion_avg = average_motion(motion)
        is_adl = classify_motion(motion, gate)
    except PipelineError as exc:
        raise StageError("motion-gate", exc) from exc

    timestamp = window.end_time
    if not is_adl:
        decision = space.decide(m_adl=False, now=timestamp, record=record)
        return WindowOutcome(
            window=window,
            motion=motion.per_joint,
            motion_average=motion_avg,
            decision=decision,
        )

    if provider is None or weights is None:
        raise ValidationError("ADL windows need a feature provider and fusion weights")
    try:
        bundle = provider(window)
    except PipelineError as exc:
        raise StageError("feature-provider", exc) from exc
    try:
        embedding = embed_bundle(bundle, weights)
        probs = classify_head(embedding, weights)
    except PipelineError as exc:
        raise StageError("fusion", exc) from exc
    try:
        decision = space.decide(
            m_adl=True,
            embedding=embedding,
            head_class=int(np.argmax(probs)),
            now=timestamp,
            record=record,
        )
    except PipelineError as exc:
        raise StageError("state-estimator", exc) from exc

    return WindowOutcome(
        window=window,
        motion=motion.per_joint,
        motion_average=motion_avg,
        decision=decision,
        embedding=embedding,
        task_probs=probs,
        bundle=bundle,
    )


@dataclass
class SessionResult:
    outcomes: list[WindowOutcome] = field(default_factory=list)

    @property
    def decisions(self) -> list[AdlDecision]:
        return [o.decision for o in self.outcomes]

    @property
    def events(self) -> list[AssistEvent]:
        return [o.event for o in self.outcomes if o.event is not None]


def run_session(
    frames: Iterable[SkeletonFrame],
    sampler_config: SamplerConfig,
    gate: GateThresholds,
    space: EmbeddingSpace,
    weights: FusionWeights | None = None,
    provider: Provider | None = None,
    behaviors: BehaviorTable | None = None,
    cooldown: float = 10.0,
    record: bool = True,
    features_out=None,
) -> SessionResult:
    """Replay a frame stream; returns per-window outcomes in order.

    ``features_out`` optionally dumps every computed feature bundle to that
    directory in the wire format (giving the files the ``files`` provider
    reads back).
    """
    from .features import store_feature_bundle

    result = SessionResult()
    behavior_state = BehaviorState()
    if features_out is not None:
        Path(features_out).mkdir(parents=True, exist_ok=True)
    for window in sample_windows(frames, sampler_config):
        outcome = process_window(window, gate, space, weights, provider, record=record)
        if behaviors is not None:
            outcome.event = select_behavior(
                outcome.decision, behaviors, behavior_state, cooldown=cooldown
            )
        if features_out is not None and outcome.bundle is not None:
            store_feature_bundle(
                outcome.bundle, feature_file_path(features_out, window.window_index)
            )
        result.outcomes.append(outcome)
    return result


def write_decision_log(result: SessionResult, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for outcome in result.outcomes:
            fh.write(json.dumps(outcome.decision_record(), sort_keys=True) + "\n")


def write_event_log(result: SessionResult, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for outcome in result.outcomes:
            if outcome.event is not None and outcome.event.kind.value != "none":
                fh.write(json.dumps(outcome.event.to_record(), sort_keys=True) + "\n")


# -- calibration ---------------------------------------------------------------


@dataclass(frozen=True)
class CalibrationConfig:
    percentile_lo: float = 1.0
    percentile_hi: float = 99.0
    margin_lo: float = 0.9
    margin_hi: float = 1.1
    tau_percentile: float = 99.0
    tau_margin: float = 1.0
    holdout_fraction: float = 0.3
    seed: int = 0


@dataclass
class CalibrationResult:
    gate: GateThresholds
    policy: DecisionPolicy
    space: EmbeddingSpace
    window_counts: dict[str, int]
    warnings: list[str]


def _embed_windows(
    frames: Sequence[SkeletonFrame],
    sampler_config: SamplerConfig,
    weights: FusionWeights,
    provider: Provider,
) -> tuple[list[float], list[np.ndarray]]:
    averages: list[float] = []
    embeddings: list[np.ndarray] = []
    for window in sample_windows(frames, sampler_config):
        motion = compute_motion_embedding(window)
        averages.append(average_motion(motion))
        embeddings.append(embed_bundle(provider(window), weights))
    return averages, embeddings


def calibrate(
    labeled_sessions: Sequence[LabeledSample],
    class_ids: dict[str, int],
    sampler_config: SamplerConfig,
    weights: FusionWeights,
    provider: Provider,
    user_id: str = "default",
    policy: DecisionPolicy | None = None,
    config: CalibrationConfig | None = None,
) -> CalibrationResult:
    """Fit gate thresholds and the unseen threshold from labeled sessions.

    Motion thresholds come from the distribution of window motion averages
    over the whole corpus. The unseen threshold is the configured percentile
    of similarity scores on per-class held-out embeddings, scaled by
    ``tau_margin``; with too little data for a holdout the policy default is
    kept and a degenerate-calibration warning is recorded.
    """
    cfg = config or CalibrationConfig()
    base_policy = policy or DecisionPolicy()
    if not labeled_sessions:
        raise ValidationError("calibration needs at least one labeled session")

    warnings: list[str] = []
    averages_all: list[float] = []
    per_sample: list[tuple[int, str, list[np.ndarray]]] = []
    window_counts: dict[str, int] = {}
    for sample in labeled_sessions:
        if sample.path is None:
            raise ValidationError(f"labeled sample {sample.sample_id!r} has no session path")
        frames = load_session(sample.path)
        averages, embeddings = _embed_windows(frames, sampler_config, weights, provider)
        window_counts[sample.sample_id] = len(embeddings)
        if not embeddings:
            warnings.append(f"sample {sample.sample_id!r}: too short to emit any window")
            continue
        averages_all.extend(averages)
        per_sample.append((class_ids[sample.true_class], sample.sample_id, embeddings))

    if not averages_all:
        raise ValidationError("no session produced any sample window; nothing to calibrate")
    gate = calibrate_thresholds(
        averages_all,
        percentile_lo=cfg.percentile_lo,
        percentile_hi=cfg.percentile_hi,
        margin_lo=cfg.margin_lo,
        margin_hi=cfg.margin_hi,
    )
    if gate.calibration.get("degenerate"):
        warnings.append("motion-gate calibration is degenerate (single window average)")

    # Per-class holdout split over samples (not windows) for the tau fit.
    rng = np.random.default_rng(cfg.seed)
    by_class: dict[int, list[tuple[str, list[np.ndarray]]]] = {}
    for class_id, sample_id, embeddings in per_sample:
        by_class.setdefault(class_id, []).append((sample_id, embeddings))

    train: list[tuple[int, np.ndarray]] = []
    holdout: list[np.ndarray] = []
    for class_id in sorted(by_class):
        entries = sorted(by_class[class_id], key=lambda e: e[0])
        order = rng.permutation(len(entries))
        n_hold = int(round(cfg.holdout_fraction * len(entries)))
        if len(entries) - n_hold < 1:
            n_hold = len(entries) - 1
        held = {entries[i][0] for i in order[:n_hold]}
        for sample_id, embeddings in entries:
            if sample_id in held:
                holdout.extend(embeddings)
            else:
                train.extend((class_id, e) for e in embeddings)

    labels = {v: k for k, v in class_ids.items()}
    space = init_space(user_id, train, gate=gate, policy=base_policy, labels=labels)

    tau = base_policy.tau_unseen
    if holdout:
        scores = [space.similarity(e).s for e in holdout]
        tau = float(cfg.tau_margin * np.percentile(scores, cfg.tau_percentile))
        if tau <= 0:
            warnings.append("held-out similarity percentile was nonpositive; keeping default tau")
            tau = base_policy.tau_unseen
    else:
        warnings.append(
            "no held-out samples for tau calibration (single-session corpus?); "
            "keeping policy default"
        )

    policy_out = DecisionPolicy(
        tau_unseen=tau,
        atypical_z=base_policy.atypical_z,
        min_history=base_policy.min_history,
        epsilon=base_policy.epsilon,
        min_class_count=base_policy.min_class_count,
    )
    space.policy = policy_out
    return CalibrationResult(
        gate=gate,
        policy=policy_out,
        space=space,
        window_counts=window_counts,
        warnings=warnings,
    )
