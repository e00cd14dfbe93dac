"""Elastic compute offloading for staged robot pipelines.

A press (robot) node learns, online, where to cut a multi-stage pipeline and
ship the remainder to a release (cloud) node: a ridge-regularized linear
predictor scores every split from its transfer/compute context, optimism
handles exploration, forced sampling keeps coverage, and a drift detector
restarts learning when the environment shifts.  A synthetic simulator, a real
TCP runtime, and a metrics/figures harness wrap the decision core.
"""

from .actions import (
    CONTEXT_DIM,
    Action,
    ContextNorms,
    FrameWeight,
    Pipeline,
    Stage,
    context_of,
    enumerate_actions,
    frame_entropy,
    frame_entropy_pairs,
    on_robot_cost,
    step_weight,
)
from .config import ConfigError, ExperimentConfig, ParseError, RangeError, UnknownKeyError, load_config
from .harness import (
    METRICS_COLUMNS,
    SCHEMA_LINE,
    RunOutput,
    read_metrics_csv,
    run,
    summarize,
    summarize_files,
    summarize_run,
    write_metrics_csv,
)
from .policy import (
    DecisionRecord,
    DirectionFilter,
    DriftDetector,
    ElasticPolicy,
    ForcedSchedule,
    detect_drift,
    direction_filter,
    forced_sequence,
    next_forced_unknown_horizon,
    select_action,
)
from .predictor import (
    BetaParams,
    PredictorState,
    compute_beta,
    estimate_coefficients,
    hold_update,
    init_predictor,
    observe_update,
    predict_elastic_cost,
)
from .runtime import (
    MAGIC,
    MAX_PAYLOAD,
    MSG_ERROR,
    MSG_FRAME,
    MSG_PING,
    MSG_RESULT,
    VERSION,
    BadMagic,
    Message,
    PressClient,
    PressResult,
    ProtocolError,
    ReleaseServer,
    Truncated,
    UnsupportedVersion,
    decode_frame,
    decode_message,
    encode_frame,
    encode_message,
    execute_stages,
    local_fallback_window,
    press_execute,
    read_message,
    run_stage,
    serve_release,
)
from .simulation import (
    ARMS,
    ConditionTrace,
    GroundTruth,
    PRESETS,
    REFERENCE_BANDWIDTH,
    RegretReport,
    SimEnvironment,
    TraceSegment,
    cumulative_regret,
    observe_cost,
    oracle_action,
    run_experiment,
)

__version__ = "0.1.0"

__all__ = [
    "CONTEXT_DIM",
    "Action",
    "ContextNorms",
    "FrameWeight",
    "Pipeline",
    "Stage",
    "context_of",
    "enumerate_actions",
    "frame_entropy",
    "frame_entropy_pairs",
    "on_robot_cost",
    "step_weight",
    "ConfigError",
    "ExperimentConfig",
    "ParseError",
    "RangeError",
    "UnknownKeyError",
    "load_config",
    "METRICS_COLUMNS",
    "SCHEMA_LINE",
    "RunOutput",
    "read_metrics_csv",
    "run",
    "summarize",
    "summarize_files",
    "summarize_run",
    "write_metrics_csv",
    "DecisionRecord",
    "DirectionFilter",
    "DriftDetector",
    "ElasticPolicy",
    "ForcedSchedule",
    "detect_drift",
    "direction_filter",
    "forced_sequence",
    "next_forced_unknown_horizon",
    "select_action",
    "BetaParams",
    "PredictorState",
    "compute_beta",
    "estimate_coefficients",
    "hold_update",
    "init_predictor",
    "observe_update",
    "predict_elastic_cost",
    "MAGIC",
    "MAX_PAYLOAD",
    "MSG_ERROR",
    "MSG_FRAME",
    "MSG_PING",
    "MSG_RESULT",
    "VERSION",
    "BadMagic",
    "Message",
    "PressClient",
    "PressResult",
    "ProtocolError",
    "ReleaseServer",
    "Truncated",
    "UnsupportedVersion",
    "decode_frame",
    "decode_message",
    "encode_frame",
    "encode_message",
    "execute_stages",
    "local_fallback_window",
    "press_execute",
    "read_message",
    "run_stage",
    "serve_release",
    "ARMS",
    "ConditionTrace",
    "GroundTruth",
    "PRESETS",
    "REFERENCE_BANDWIDTH",
    "RegretReport",
    "SimEnvironment",
    "TraceSegment",
    "cumulative_regret",
    "observe_cost",
    "oracle_action",
    "run_experiment",
    "__version__",
]
