"""Config-driven language-agent pipelines trained with judge feedback,
textual gradients, and symbolic optimizers."""

from .actions import (
    ControllerUpdate,
    NodeAdd,
    NodeDelete,
    NodeDescriptionUpdate,
    NodeMove,
    OptimizerAction,
    PromptComponentUpdate,
    RoleAdd,
    RoleDelete,
    RoleUpdate,
    ToolCreate,
    ToolDelete,
    ToolEdit,
    apply_action,
)
from .backprop import GradientLevel, LanguageGradient, backpropagate
from .config_io import (
    load_config,
    parse_config,
    save_config,
    serialize_config,
    structurally_equal,
)
from .datasets import Example, load_dataset
from .forward import NodeRecord, Trajectory, run_pipeline
from .gateway import (
    ChatRequest,
    ChatResponse,
    HttpBackend,
    Message,
    Purpose,
    RetryPolicy,
    ScriptedBackend,
    ScriptEntry,
    ScriptMode,
    with_retry,
)
from .loss import LanguageLoss, LossMode, build_loss_request, compute_loss, parse_loss_response
from .metrics import metric_exact_match, metric_f1
from .model import (
    AgentConfig,
    Controller,
    NodeSpec,
    PipelineSpec,
    PromptTemplate,
    RouteType,
    ToolSpec,
    ToolStatus,
    extract_placeholders,
    render_prompt,
    validate,
)
from .optimizers import (
    GradientBatch,
    LearningRate,
    LRLevel,
    UpdateOutcome,
    UpdateStatus,
    aggregate_batch,
    apply_with_rollback,
    optimize_node,
    optimize_pipeline,
    optimize_prompt,
    optimize_tools,
)
from .training import (
    Checkpoint,
    EvalReport,
    MetricName,
    TrainConfig,
    evaluate,
    replay_run,
    train,
)

__version__ = "0.1.0"
