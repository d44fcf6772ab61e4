"""Streaming open-set recognition of activities of daily living.

Pipeline stages, in order: rolling-window skeleton sampling, per-joint motion
embedding with an ADL / non-ADL gate, spatial mid-fusion of video / pose /
object features into a 128-d activity embedding, per-user open-set state
estimation (seen / unseen / atypical), assistive-event selection, and an
evaluation harness for the reporting battery.
"""

__version__ = "0.1.0"

from .errors import FileFormatError, PipelineError, ValidationError
from .skeleton import (
    JOINT_NAMES,
    NUM_JOINTS,
    RollingSampler,
    SamplerConfig,
    SampleWindow,
    SkeletonFrame,
    load_session,
    sample_windows,
    save_session,
)
from .motion import (
    GateThresholds,
    MotionEmbedding,
    average_motion,
    calibrate_thresholds,
    classify_motion,
    compute_motion_embedding,
)
from .features import (
    FeatureBundle,
    ObjectDetection,
    ProjectionConfig,
    load_feature_bundle,
    objects_to_grid,
    spatial_position_matrix,
    store_feature_bundle,
    synthetic_features,
)
from .fusion import (
    FusionWeights,
    PipelineConfig,
    apply_spatial_reference,
    classify_head,
    concat_modalities,
    conv1d_forward,
    conv2d_forward,
    embed_bundle,
    fuse,
    load_weights,
    random_weights,
    store_weights,
)
from .space import (
    AdlDecision,
    AdlType,
    ClassStats,
    DecisionPolicy,
    EmbeddingSpace,
    init_space,
    load_space,
    save_space,
)
from .assist import (
    AssistEvent,
    BehaviorState,
    BehaviorTable,
    ClassBehavior,
    EventKind,
    select_behavior,
)
from .evaluation import (
    LabeledSample,
    MetricReport,
    PredictionSet,
    aggregate_rates,
    compute_metrics,
    cross_subject_split,
    friedman_test,
    mcnemar_test,
)
from .pipeline import calibrate, make_provider, process_window, run_session
from .report import load_report, write_report
