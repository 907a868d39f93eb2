"""End-to-end training loop, evaluation, checkpointing, and audit replay.

One step = forward pass, loss, and backprop for every example in the
batch, then the optimizer families in order (prompts, tools, node
config, pipeline), each with its own rollback check.  Every applied
update is checkpointed and audited so a run can be replayed.
"""

from __future__ import annotations

import datetime
import json
import random
import shlex
import subprocess
import zlib
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .actions import action_from_dict, action_to_dict, apply_action
from .backprop import GradientLevel, backpropagate
from .config_io import load_config, save_config, serialize_config
from .datasets import Example
from .errors import (
    ConfigError,
    EngineError,
    MissingGroundTruth,
    MissingScoreTag,
    ScriptExhausted,
    ScriptMismatch,
)
from .forward import Trajectory, run_pipeline, write_trajectory
from .gateway import Backend, write_transcript
from .loss import LossMode, compute_loss
from .metrics import metric_exact_match, metric_f1
from .model import AgentConfig, validate
from .optimizers import (
    LRLevel,
    OptimizerTrace,
    UpdateStatus,
    aggregate_batch,
    apply_with_rollback,
    optimize_node,
    optimize_pipeline,
    optimize_prompt,
    optimize_tools,
)


class MetricName(str, Enum):
    EXACT_MATCH = "exact_match"
    F1 = "f1"
    NUMERIC_SCORE = "numeric_score"
    JUDGE_SCORE = "judge_score"


@dataclass
class TrainConfig:
    epochs: int = 1
    batch_size: int = 1
    learning_rate_level: LRLevel = LRLevel.MODERATE
    rollback_enabled: bool = True
    seed: int = 0
    mode: LossMode = LossMode.SUPERVISED
    metric: MetricName = MetricName.EXACT_MATCH
    max_examples: int | None = None
    shuffle: bool = False
    optimize_structure: bool = False
    tools_enabled: bool = False
    forward_temperature: float = 0.0
    model_id: str = ""
    scorer_cmd: str | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.mode is LossMode.SCORE_INFORMED and self.metric not in (
            MetricName.EXACT_MATCH,
            MetricName.F1,
        ):
            raise ConfigError("score-informed training needs the em or f1 metric")


@dataclass
class Checkpoint:
    version: int
    document: str
    step: int
    mean_loss_score: float | None
    created_at: str


@dataclass
class EvalScore:
    id: str
    prediction: str
    score: float


@dataclass
class EvalReport:
    metric: str
    per_example: list[EvalScore]
    aggregate: float

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "aggregate": self.aggregate,
            "per_example": [
                {"id": s.id, "prediction": s.prediction, "score": s.score}
                for s in self.per_example
            ],
        }


def derive_seed(*parts) -> int:
    """Stable integer seed from arbitrary parts (no process-salted hashing)."""
    return zlib.crc32("/".join(str(p) for p in parts).encode("utf-8"))


class RunWriter:
    """All on-disk artifacts of one run live under a single directory."""

    def __init__(self, run_dir: str | Path):
        self.root = Path(run_dir)
        (self.root / "checkpoints").mkdir(parents=True, exist_ok=True)
        self.audit_path = self.root / "audit.jsonl"
        self.manifest_path = self.root / "manifest.jsonl"
        self.trajectories_path = self.root / "trajectories.jsonl"
        for path in (self.audit_path, self.manifest_path, self.trajectories_path):
            path.write_text("", encoding="utf-8")

    def checkpoint_path(self, version: int) -> Path:
        return self.root / "checkpoints" / f"v{version}.cfg"

    def write_checkpoint(self, checkpoint: Checkpoint) -> None:
        self.checkpoint_path(checkpoint.version).write_text(
            checkpoint.document, encoding="utf-8"
        )
        manifest_line = {
            "version": checkpoint.version,
            "step": checkpoint.step,
            "path": f"checkpoints/v{checkpoint.version}.cfg",
            "mean_loss_score": checkpoint.mean_loss_score,
            "created_at": checkpoint.created_at,
        }
        with self.manifest_path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(manifest_line, ensure_ascii=False) + "\n")

    def write_audit(self, record: dict) -> None:
        with self.audit_path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")

    def write_trajectory(self, trajectory: Trajectory) -> None:
        with self.trajectories_path.open("a", encoding="utf-8") as fh:
            write_trajectory(trajectory, fh)

    def write_final(self, config: AgentConfig, backend: Backend | None = None) -> None:
        save_config(config, str(self.root / "final.cfg"))
        if backend is not None:
            write_transcript(backend, str(self.root / "transcript.jsonl"))


def _make_checkpoint(config: AgentConfig, step: int, mean_loss: float | None) -> Checkpoint:
    return Checkpoint(
        version=config.version,
        document=serialize_config(config),
        step=step,
        mean_loss_score=mean_loss,
        created_at=datetime.datetime.now(datetime.timezone.utc).isoformat(),
    )


def _external_score_fn(cfg: TrainConfig, example: Example):
    if cfg.mode is not LossMode.SCORE_INFORMED or example.ground_truth is None:
        return None
    truth = example.ground_truth
    if cfg.metric is MetricName.F1:
        return lambda output: (metric_f1(output, truth), "F1")
    return lambda output: (metric_exact_match(output, truth), "exact match")


def _loss_for(
    trajectory: Trajectory, example: Example, cfg: TrainConfig, backend: Backend
):
    if cfg.mode is LossMode.UNSUPERVISED:
        return compute_loss(trajectory, backend, model_id=cfg.model_id)
    if example.ground_truth is None:
        raise MissingGroundTruth(f"example {example.id!r} has no ground truth")
    score_fn = _external_score_fn(cfg, example)
    external = score_fn(trajectory.final_output) if score_fn else None
    return compute_loss(
        trajectory,
        backend,
        ground_truth=example.ground_truth,
        external_score=external,
        model_id=cfg.model_id,
    )


@dataclass
class _StepState:
    step: int
    processed: list[tuple[Example, Trajectory]]
    mean_loss: float | None

    @property
    def last_example(self) -> Example:
        return self.processed[-1][0]

    @property
    def last_trajectory(self) -> Trajectory:
        return self.processed[-1][1]


def _prompt_gradients(state: _StepState, node_name: str):
    gradients = []
    for _, trajectory in state.processed:
        record = trajectory.record_for(node_name)
        if record is not None and record.gradient is not None:
            gradients.append(record.gradient)
    return gradients


def _node_gradients(state: _StepState, node_name: str):
    gradients = []
    for _, trajectory in state.processed:
        record = trajectory.record_for(node_name)
        if record is not None and record.node_gradient is not None:
            gradients.append(record.node_gradient)
    return gradients


def _apply_family(
    config: AgentConfig,
    actions,
    kind: str,
    trace: OptimizerTrace,
    state: _StepState,
    cfg: TrainConfig,
    backend: Backend,
    writer: RunWriter | None,
    checkpoints: list[Checkpoint],
    tool_handlers,
) -> AgentConfig:
    example = state.last_example
    config, outcome = apply_with_rollback(
        config,
        actions,
        example,
        backend,
        cfg.rollback_enabled,
        original_loss=state.last_trajectory.loss,
        original_output=state.last_trajectory.final_output,
        use_ground_truth=cfg.mode is not LossMode.UNSUPERVISED,
        external_score_fn=_external_score_fn(cfg, example),
        seed=derive_seed(cfg.seed, "rollback", state.step, example.id),
        tools_enabled=cfg.tools_enabled,
        tool_handlers=tool_handlers,
        forward_temperature=cfg.forward_temperature,
        model_id=cfg.model_id,
    )
    nodes = {getattr(a, "node", None) for a in outcome.actions_attempted}
    if writer is not None:
        writer.write_audit(
            {
                "step": state.step,
                "node": nodes.pop() if len(nodes) == 1 else None,
                "optimizer_kind": kind,
                "actions": [action_to_dict(a) for a in outcome.actions_attempted],
                "status": outcome.status.value,
                "reason": outcome.reason,
                "pre_version": outcome.pre_version,
                "post_version": outcome.post_version,
                "raw_replies": trace.raw_replies,
            }
        )
    if outcome.status is UpdateStatus.APPLIED:
        checkpoint = _make_checkpoint(config, state.step, state.mean_loss)
        checkpoints.append(checkpoint)
        if writer is not None:
            writer.write_checkpoint(checkpoint)
    return config


def train(
    initial: AgentConfig,
    dataset: list[Example],
    cfg: TrainConfig,
    backend: Backend,
    run_dir: str | Path | None = None,
    tool_handlers=None,
) -> tuple[AgentConfig, list[Checkpoint]]:
    """Run the full learning loop over ``dataset``; returns the final config.

    Per-example failures are skipped; the run aborts only when a scripted
    strict-sequence backend runs dry or mismatches.
    """
    if not dataset:
        raise ConfigError("dataset is empty")
    validate(initial)
    config = initial
    writer = RunWriter(run_dir) if run_dir is not None else None
    checkpoints = [_make_checkpoint(config, step=0, mean_loss=None)]
    if writer is not None:
        writer.write_checkpoint(checkpoints[0])

    examples = list(dataset[: cfg.max_examples] if cfg.max_examples else dataset)
    step = 0
    for epoch in range(cfg.epochs):
        ordered = list(examples)
        if cfg.shuffle:
            random.Random(derive_seed(cfg.seed, "shuffle", epoch)).shuffle(ordered)
        for start in range(0, len(ordered), cfg.batch_size):
            batch = ordered[start : start + cfg.batch_size]
            step += 1
            processed: list[tuple[Example, Trajectory]] = []
            for example in batch:
                try:
                    trajectory = run_pipeline(
                        config,
                        example.input,
                        backend,
                        seed=derive_seed(cfg.seed, epoch, example.id),
                        tool_handlers=tool_handlers,
                        tools_enabled=cfg.tools_enabled,
                        forward_temperature=cfg.forward_temperature,
                        model_id=cfg.model_id,
                    )
                    trajectory.loss = _loss_for(trajectory, example, cfg, backend)
                    backpropagate(
                        trajectory,
                        trajectory.loss,
                        config,
                        backend,
                        GradientLevel.PROMPT,
                        model_id=cfg.model_id,
                    )
                    if cfg.optimize_structure:
                        backpropagate(
                            trajectory,
                            trajectory.loss,
                            config,
                            backend,
                            GradientLevel.NODE,
                            model_id=cfg.model_id,
                        )
                except (ScriptExhausted, ScriptMismatch):
                    raise
                except EngineError as err:
                    partial = getattr(err, "partial_trajectory", None)
                    if writer is not None:
                        if partial is not None:
                            writer.write_trajectory(partial)
                        writer.write_audit(
                            {
                                "step": step,
                                "skipped_example": example.id,
                                "error": f"{type(err).__name__}: {err}",
                            }
                        )
                    continue
                processed.append((example, trajectory))
                if writer is not None:
                    writer.write_trajectory(trajectory)
            if not processed:
                continue

            scores = [t.loss.score for _, t in processed if t.loss and t.loss.score is not None]
            state = _StepState(
                step=step,
                processed=processed,
                mean_loss=sum(scores) / len(scores) if scores else None,
            )

            # Prompt optimizer: per node, per role, per component.
            trace = OptimizerTrace()
            actions = []
            for node in list(config.pipeline.nodes):
                gradients = _prompt_gradients(state, node.name)
                if not gradients:
                    continue
                gradient_batch = aggregate_batch(gradients)
                for role in node.role_names():
                    actions.extend(
                        optimize_prompt(
                            config,
                            node.name,
                            role,
                            gradient_batch,
                            cfg.learning_rate_level,
                            backend,
                            trace=trace,
                            model_id=cfg.model_id,
                        )
                    )
            config = _apply_family(
                config, actions, "prompt", trace, state, cfg, backend,
                writer, checkpoints, tool_handlers,
            )

            # Tool optimizer.
            if cfg.tools_enabled:
                trace = OptimizerTrace()
                actions = []
                for node in list(config.pipeline.nodes):
                    gradients = _prompt_gradients(state, node.name)
                    if not gradients or not node.tools:
                        continue
                    actions.extend(
                        optimize_tools(
                            config,
                            node.name,
                            aggregate_batch(gradients),
                            cfg.learning_rate_level,
                            backend,
                            trace=trace,
                            model_id=cfg.model_id,
                        )
                    )
                config = _apply_family(
                    config, actions, "tool", trace, state, cfg, backend,
                    writer, checkpoints, tool_handlers,
                )

            # Node and pipeline optimizers run on node-level gradients.
            if cfg.optimize_structure:
                trace = OptimizerTrace()
                actions = []
                for node in list(config.pipeline.nodes):
                    node_gradients = _node_gradients(state, node.name)
                    if not node_gradients:
                        continue
                    actions.extend(
                        optimize_node(
                            node,
                            [g.suggestion_for_node for g in node_gradients],
                            backend,
                            lr=cfg.learning_rate_level,
                            trace=trace,
                            model_id=cfg.model_id,
                        )
                    )
                config = _apply_family(
                    config, actions, "node", trace, state, cfg, backend,
                    writer, checkpoints, tool_handlers,
                )

                all_node_gradients = []
                for node_name in config.pipeline.node_names():
                    all_node_gradients.extend(_node_gradients(state, node_name))
                covered = {g.node_name for g in all_node_gradients}
                if covered >= set(config.pipeline.node_names()):
                    trace = OptimizerTrace()
                    actions = optimize_pipeline(
                        config,
                        all_node_gradients,
                        cfg.learning_rate_level,
                        backend,
                        trace=trace,
                        model_id=cfg.model_id,
                    )
                    config = _apply_family(
                        config, actions, "pipeline", trace, state, cfg, backend,
                        writer, checkpoints, tool_handlers,
                    )

    if writer is not None:
        writer.write_final(config, backend)
    return config, checkpoints


def run_external_scorer(cmd: str, example: Example, prediction: str) -> float:
    """Shell out to a grader executable; it must print one integer."""
    payload = json.dumps(
        {
            "id": example.id,
            "input": example.input,
            "prediction": prediction,
            "ground_truth": example.ground_truth,
        },
        ensure_ascii=False,
    )
    result = subprocess.run(
        shlex.split(cmd),
        input=payload,
        capture_output=True,
        text=True,
        check=False,
    )
    if result.returncode != 0:
        raise EngineError(f"scorer command failed ({result.returncode}): {result.stderr[:200]}")
    try:
        return float(int(result.stdout.strip().split()[0]))
    except (ValueError, IndexError) as err:
        raise EngineError(f"scorer output {result.stdout!r} is not an integer") from err


def evaluate(
    config: AgentConfig,
    dataset: list[Example],
    metric: MetricName,
    backend: Backend,
    *,
    seed: int = 0,
    tools_enabled: bool = False,
    tool_handlers=None,
    forward_temperature: float = 0.0,
    model_id: str = "",
    scorer_cmd: str | None = None,
) -> EvalReport:
    """Forward passes only; no optimization, config version untouched."""
    per_example: list[EvalScore] = []
    for example in dataset:
        trajectory = run_pipeline(
            config,
            example.input,
            backend,
            seed=derive_seed(seed, "eval", example.id),
            tool_handlers=tool_handlers,
            tools_enabled=tools_enabled,
            forward_temperature=forward_temperature,
            model_id=model_id,
        )
        prediction = trajectory.final_output
        if metric in (MetricName.EXACT_MATCH, MetricName.F1):
            if example.ground_truth is None:
                raise MissingGroundTruth(f"example {example.id!r} has no ground truth")
            fn = metric_exact_match if metric is MetricName.EXACT_MATCH else metric_f1
            value = fn(prediction, example.ground_truth)
        elif metric is MetricName.JUDGE_SCORE:
            loss = compute_loss(
                trajectory, backend, ground_truth=example.ground_truth, model_id=model_id
            )
            if loss.score is None:
                raise MissingScoreTag("judge produced no score for the judge_score metric")
            value = float(loss.score)
        elif metric is MetricName.NUMERIC_SCORE:
            if not scorer_cmd:
                raise ConfigError("numeric_score metric needs a scorer command")
            value = run_external_scorer(scorer_cmd, example, prediction)
        else:
            raise ConfigError(f"unknown metric {metric}")
        per_example.append(EvalScore(example.id, prediction, value))
    aggregate = sum(s.score for s in per_example) / len(per_example) if per_example else 0.0
    return EvalReport(metric=metric.value, per_example=per_example, aggregate=aggregate)


def replay_run(run_dir: str | Path) -> AgentConfig:
    """Rebuild the final config by applying the audit log to checkpoint v0."""
    root = Path(run_dir)
    config = load_config(str(root / "checkpoints" / "v0.cfg"))
    audit_path = root / "audit.jsonl"
    if not audit_path.exists():
        return config
    with audit_path.open(encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            record = json.loads(line)
            if record.get("status") != UpdateStatus.APPLIED.value:
                continue
            for action_dict in record.get("actions", []):
                config = apply_action(config, action_from_dict(action_dict))
    return config
