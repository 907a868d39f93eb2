"""Turning gradients into validated mutations of the agent's symbolic weights.

Four optimizer families: prompt components, tools, node configuration,
and pipeline structure.  Every family parses structured replies, retries
an unusable reply up to three attempts, drops the update if the problem
persists, and can re-evaluate the current example to roll a bad update
back.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

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
    placeholder_preserving,
)
from .backprop import GradientLevel, LanguageGradient
from .config_io import (
    config_to_dict,
    controller_from_dict,
    node_config_text,
    node_from_dict,
    template_from_dict,
    tool_from_dict,
    tool_to_dict,
)
from .datasets import Example
from .errors import (
    EngineError,
    IllegalAction,
    MixedNodes,
    SchemaViolation,
    ScriptExhausted,
    ScriptMismatch,
    UnparseableResult,
)
from .forward import run_pipeline
from .gateway import Backend, ChatRequest, Message, Purpose
from .loss import LanguageLoss, compute_loss, extract_tag, fill_slots
from .model import AgentConfig, PROMPT_COMPONENTS, PipelineSpec, PromptTemplate, ToolStatus

MAX_UPDATE_ATTEMPTS = 3


class LRLevel(str, Enum):
    CONSERVATIVE = "conservative"
    MODERATE = "moderate"
    AGGRESSIVE = "aggressive"


LR_CLAUSES = {
    LRLevel.CONSERVATIVE: (
        "Optimize conservatively: make the smallest edit that addresses the "
        "feedback and preserve the existing structure and wording wherever possible."
    ),
    LRLevel.MODERATE: (
        "Optimize with moderate boldness: rewrite the parts that clearly "
        "underperform while keeping what already works."
    ),
    LRLevel.AGGRESSIVE: (
        "Optimize aggressively: restructure or rewrite entire sections whenever "
        "the feedback suggests a better design."
    ),
}


@dataclass(frozen=True)
class LearningRate:
    level: LRLevel = LRLevel.MODERATE

    @property
    def injected_clause(self) -> str:
        return LR_CLAUSES[self.level]


def _lr_clause(lr: LearningRate | LRLevel) -> str:
    level = lr.level if isinstance(lr, LearningRate) else lr
    return LR_CLAUSES[level]


class UpdateStatus(str, Enum):
    APPLIED = "applied"
    NO_CHANGE = "no_change"
    REJECTED = "rejected"
    ROLLED_BACK = "rolled_back"


@dataclass
class UpdateOutcome:
    status: UpdateStatus
    actions_attempted: list[OptimizerAction]
    reason: str | None
    pre_version: int
    post_version: int


@dataclass
class OptimizerTrace:
    """Side-channel capturing raw optimizer replies for the audit log."""

    raw_replies: list[str] = field(default_factory=list)
    attempts: int = 0

    def record(self, reply: str) -> None:
        self.raw_replies.append(reply)
        self.attempts += 1


@dataclass
class GradientBatch:
    node_name: str
    level: GradientLevel
    gradients: list[LanguageGradient]

    def context(self) -> str:
        sections = []
        for index, gradient in enumerate(self.gradients, start=1):
            sections.append(
                f"# Example {index}\n"
                f"- Output result: <output>{gradient.node_output}</output>\n"
                f"- Suggestion: <suggestion>{gradient.suggestion_for_node}</suggestion>"
            )
        return "\n\n".join(sections)


def aggregate_batch(gradients: list[LanguageGradient]) -> GradientBatch:
    """Bundle one node's gradients from a batch into a single optimizer context."""
    if not gradients:
        raise ValueError("cannot aggregate an empty gradient batch")
    node_name = gradients[0].node_name
    level = gradients[0].level
    for gradient in gradients[1:]:
        if gradient.node_name != node_name or gradient.level is not level:
            raise MixedNodes(
                f"batch mixes ({node_name}, {level.value}) with "
                f"({gradient.node_name}, {gradient.level.value})"
            )
    return GradientBatch(node_name=node_name, level=level, gradients=list(gradients))


def _as_batch(gradient: LanguageGradient | GradientBatch) -> GradientBatch:
    if isinstance(gradient, GradientBatch):
        return gradient
    return GradientBatch(gradient.node_name, gradient.level, [gradient])


# --- prompt templates ----------------------------------------------------------

PROMPT_OPTIMIZER_TEMPLATE = """You are now a prompt fine-tuner for a large language model. I will provide you with a prompt template along with its corresponding input and output information.

Please modify the prompt based on the provided data:
- The component being optimized is: {component}
- The current prompt template is: {prompt_template}

Here is some information about the model when using this template:

{examples}

You need to analyze the content above and input the optimized prompt result. Please wrap your analysis in <analyse></analyse> and the new prompt in <new_prompt></new_prompt>.

Please note:
1. When actually using the prompt template, variables are filled into the slots enclosed in {}. Therefore, please ensure that the content enclosed in {} in both the new and old prompts remains the same, with no variables added or removed.
2. Ensure that <analyse></analyse> and <new_prompt></new_prompt> each appear only once.
3. If you believe that the current prompt template performs sufficiently well, leave <new_prompt></new_prompt> empty."""

TOOL_SELECT_TEMPLATE = """You are a fine-tuner of the tool set used by one step of a task. Based on the feedback below, decide for each tool whether it should be kept, improved (by editing the tool description used for function calling), or deleted, and whether a new tool needs to be implemented.

## Current tools
{tools}

## Feedback
{examples}

Reply with a JSON list enclosed in <result></result>. Each element is a dict with an "action" field: one of "keep", "edit", "delete", "create". For "keep", "edit" and "delete", also include a "tool" field naming the tool. If the current tools are already adequate, output an empty list."""

TOOL_EDIT_TEMPLATE = """You are improving the description of the tool "{tool}". The description is used for function calling, so it must state precisely what the tool does and how to call it.

## Current description
{description}

## Feedback
{examples}

Write the improved description and enclose it in <result></result>."""

TOOL_CREATE_TEMPLATE = """You are designing a new tool for this step based on the feedback below.

## Existing tools
{tools}

## Feedback
{examples}

Reply with a JSON object enclosed in <result></result> with the fields "name" (an identifier), "description", "parameters" (a list of dicts with "name", "type", "required", "description"), and "implementation_source" (source code implementing the tool; it is stored for review and never executed automatically)."""

NODE_OPTIMIZER_TEMPLATE = """You are a large model fine-tuner. Now you need to try to optimize the information of a node. For a complex task, it has been divided into multiple nodes, each containing multiple roles that work together to complete the task of this node. Each role is backed by an LLM Agent, and you need to optimize the configuration information of one of the nodes.

Here are the relevant explanations for the Node configuration:
- The fields in the "controller" indicate the scheduling method of the model. If there is only one role, this item does not need to be optimized:
  - "route_type" indicates the scheduling method, which has three values: "random" means random scheduling, "order" means sequential scheduling, and "llm" means scheduling determined by the LLM model.
  - "route_system_prompt" and "route_last_prompt" are used when "route_type" is "llm" and are respectively the system prompt and last prompt given to the LLM model responsible for scheduling.
- "begin_role" is a string indicating the name of the starting role of this node.
- "roles" is a dictionary where the key is the role name, and the value is the prompt used by this role.

Next, I will give you a Node configuration and several modification suggestions. You need to modify the Node configuration based on the suggestions:

## Current Node Config
{node_config}

## Suggestions
{suggestions}

When providing the modification plan, you need to give the optimized result in the following format. It is a list, each element is a dict, and the dict contains an action field indicating the operation on the Node. The supported actions are:
- {"action": "update_description", "description": "<new description>"}
- {"action": "update_controller", "controller": {"route_type": "random" or "order" or "llm", "route_system_prompt": "...", "route_last_prompt": "..."}}
- {"action": "add_role", "role": "<name>", "prompt": {"task_description": "...", "few_shot_examples": [], "principles": "...", "output_format_control": "..."}}
- {"action": "delete_role", "role": "<name>", "new_begin_role": "<name>"} ("new_begin_role" is required when deleting the starting role)
- {"action": "update_role", "role": "<name>", "prompt": {...}}

Your optimized result should be enclosed in <result></result>, that is, the content inside <result></result> should be a JSON-formatted list, which should be able to be directly loaded by json.loads().

Note:
1. If you think the current configuration is already excellent and does not need modification, you can directly output an empty list.
2. The format of <result>[optimization method]</result> needs to strictly follow the given format, otherwise, it will be judged as incorrect."""

PIPELINE_OPTIMIZER_TEMPLATE = """You are a large model fine-tuner. You need to optimize the pipeline of an agent system. The agent system is defined by a config document: a "task_description" and an ordered list of "nodes"; the output of each node is the input of the next one. Each node has a "name", a "description", a set of "roles" with their prompts, a "controller" for role scheduling, and optional "tools".

You can update the pipeline using the following atomic operations:
- {"action": "add_node", "position": <index>, "node": {<full node config>}} inserts a new node at the given position.
- {"action": "delete_node", "node": "<name>"} deletes a node.
- {"action": "move_node", "node": "<name>", "position": <index>} moves a node to a new position.

First analyze how the pipeline could be improved, then implement the update using the atomic operations.

## Current pipeline config
{pipeline_config}

## Feedback per node
{gradients}

Wrap your analysis in <analyse></analyse>. Your optimized result should be enclosed in <result></result>: a JSON-formatted list of atomic operations that can be directly loaded by json.loads(). If the pipeline needs no change, output an empty list."""


def _user_request(body: str, purpose: Purpose, lr, max_tokens: int, model_id: str) -> ChatRequest:
    content = _lr_clause(lr) + "\n\n" + body
    return ChatRequest(
        messages=[Message("user", content)],
        purpose=purpose,
        temperature=0.0,
        max_tokens=max_tokens,
        model_id=model_id,
    )


def _followup(request: ChatRequest, reply: str, note: str) -> ChatRequest:
    return ChatRequest(
        messages=request.messages + [Message("assistant", reply), Message("user", note)],
        purpose=request.purpose,
        temperature=request.temperature,
        max_tokens=request.max_tokens,
        model_id=request.model_id,
    )


def _result_block(reply: str) -> str:
    block = extract_tag(reply, "result")
    if block is None:
        raise UnparseableResult("reply has no <result> block")
    return block


def _result_json(reply: str) -> object:
    try:
        return json.loads(_result_block(reply))
    except json.JSONDecodeError as err:
        raise UnparseableResult(f"<result> is not valid JSON: {err}") from None


def _attempt_loop(
    backend: Backend,
    request: ChatRequest,
    parse: Callable[[str], object],
    corrective: str,
    trace: OptimizerTrace | None,
):
    """Run up to MAX_UPDATE_ATTEMPTS completions; None when every attempt failed."""
    for attempt in range(MAX_UPDATE_ATTEMPTS):
        reply = backend.complete(request).text
        if trace is not None:
            trace.record(reply)
        try:
            return parse(reply)
        except (UnparseableResult, IllegalAction, SchemaViolation) as err:
            note = f"Your previous reply was not usable ({err}). {corrective}"
            request = _followup(request, reply, note)
    return None


# --- PromptOptimizer ------------------------------------------------------------


def optimize_prompt(
    config: AgentConfig,
    node: str,
    role: str,
    gradient: LanguageGradient | GradientBatch,
    lr: LearningRate | LRLevel = LRLevel.MODERATE,
    backend: Backend | None = None,
    *,
    trace: OptimizerTrace | None = None,
    max_tokens: int = 1024,
    model_id: str = "",
) -> list[OptimizerAction]:
    """One optimizer request per prompt component; failed components degrade to no-op.

    An accepted edit must keep the component's placeholder set; violations
    are retried with an error note up to three total attempts.
    """
    if backend is None:
        raise ValueError("optimize_prompt needs a backend")
    batch = _as_batch(gradient)
    template = config.pipeline.node(node).roles[role]
    actions: list[OptimizerAction] = []

    for component in PROMPT_COMPONENTS:
        old_text = template.component_text(component)
        body = fill_slots(
            PROMPT_OPTIMIZER_TEMPLATE,
            component=component,
            prompt_template=old_text,
            examples=batch.context(),
        )
        request = _user_request(body, Purpose.OPTIMIZER_PROMPT, lr, max_tokens, model_id)

        def parse(reply: str, _old: str = old_text) -> str | None:
            new_text = extract_tag(reply, "new_prompt")
            if new_text is None:
                raise UnparseableResult("reply has no <new_prompt> block")
            new_text = new_text.strip()
            if not new_text:
                return None  # component already good
            if not placeholder_preserving(_old, new_text):
                raise UnparseableResult(
                    "the new prompt changed the set of {} variables"
                )
            return new_text

        corrective = (
            "Reply again with <analyse></analyse> and <new_prompt></new_prompt>; keep "
            "the content enclosed in {} identical to the old prompt."
        )
        outcome = _attempt_loop(backend, request, parse, corrective, trace)
        if isinstance(outcome, str):
            actions.append(PromptComponentUpdate(node, role, component, outcome))
    return actions


# --- ToolOptimizer --------------------------------------------------------------


def _tools_json(tools) -> str:
    return json.dumps([tool_to_dict(t) for t in tools], indent=2, ensure_ascii=False)


def optimize_tools(
    config: AgentConfig,
    node: str,
    gradient: LanguageGradient | GradientBatch,
    lr: LearningRate | LRLevel = LRLevel.MODERATE,
    backend: Backend | None = None,
    *,
    trace: OptimizerTrace | None = None,
    max_tokens: int = 1024,
    model_id: str = "",
) -> list[OptimizerAction]:
    """Stage 1 picks an operation per tool; stage 2 produces the payloads.

    Created tools are always stored disabled so generated code is never
    executed without review.
    """
    if backend is None:
        raise ValueError("optimize_tools needs a backend")
    batch = _as_batch(gradient)
    node_spec = config.pipeline.node(node)
    tool_names = {t.name for t in node_spec.tools}

    select_body = fill_slots(
        TOOL_SELECT_TEMPLATE,
        tools=_tools_json(node_spec.tools),
        examples=batch.context(),
    )
    request = _user_request(select_body, Purpose.OPTIMIZER_TOOL, lr, max_tokens, model_id)

    def parse_select(reply: str) -> list[dict]:
        data = _result_json(reply)
        if not isinstance(data, list) or not all(isinstance(x, dict) for x in data):
            raise UnparseableResult("<result> must be a JSON list of dicts")
        return data

    decisions = _attempt_loop(
        backend,
        request,
        parse_select,
        "Reply with a JSON list of {\"action\": ..., \"tool\": ...} dicts in <result></result>.",
        trace,
    )
    if decisions is None:
        return []

    actions: list[OptimizerAction] = []
    for decision in decisions:
        kind = decision.get("action")
        tool = decision.get("tool")
        if kind == "delete":
            if tool in tool_names:
                actions.append(ToolDelete(node, tool))
        elif kind == "edit":
            if tool not in tool_names:
                continue  # unknown target: treated as keep
            current = next(t for t in node_spec.tools if t.name == tool)
            edit_body = fill_slots(
                TOOL_EDIT_TEMPLATE,
                tool=tool,
                description=current.description,
                examples=batch.context(),
            )
            edit_request = _user_request(
                edit_body, Purpose.OPTIMIZER_TOOL, lr, max_tokens, model_id
            )

            def parse_edit(reply: str) -> str:
                text = _result_block(reply).strip()
                if not text:
                    raise UnparseableResult("<result> is empty")
                return text

            new_description = _attempt_loop(
                backend,
                edit_request,
                parse_edit,
                "Reply with the new description enclosed in <result></result>.",
                trace,
            )
            if new_description is not None:
                actions.append(ToolEdit(node, tool, new_description))
        elif kind == "create":
            create_body = fill_slots(
                TOOL_CREATE_TEMPLATE,
                tools=_tools_json(node_spec.tools),
                examples=batch.context(),
            )
            create_request = _user_request(
                create_body, Purpose.OPTIMIZER_TOOL, lr, max_tokens, model_id
            )

            def parse_create(reply: str):
                data = _result_json(reply)
                if not isinstance(data, dict):
                    raise UnparseableResult("<result> must be a JSON object")
                spec = tool_from_dict(data, "tool")
                spec.status = ToolStatus.DISABLED  # never auto-enable generated code
                candidate = ToolCreate(node, spec)
                apply_action(config, candidate)  # legality check only
                return candidate

            created = _attempt_loop(
                backend,
                create_request,
                parse_create,
                "Reply with one JSON tool object enclosed in <result></result>.",
                trace,
            )
            if created is not None:
                actions.append(created)
        # "keep" and anything unrecognized fall through as keep
    return actions


# --- Node optimizer -------------------------------------------------------------


def _node_action_from_record(record: dict, node_name: str) -> OptimizerAction:
    kind = record.get("action")
    try:
        if kind == "update_description":
            return NodeDescriptionUpdate(node_name, record["description"])
        if kind == "update_controller":
            return ControllerUpdate(
                node_name, controller_from_dict(record["controller"], "controller")
            )
        if kind in ("add_role", "update_role"):
            prompt = record["prompt"]
            if isinstance(prompt, str):
                template = PromptTemplate(task_description=prompt)
            else:
                template = template_from_dict(prompt, "prompt")
            if kind == "add_role":
                return RoleAdd(node_name, record["role"], template)
            return RoleUpdate(node_name, record["role"], template)
        if kind == "delete_role":
            return RoleDelete(node_name, record["role"], record.get("new_begin_role"))
    except (KeyError, TypeError) as err:
        raise UnparseableResult(f"bad {kind!r} record: {err}") from None
    raise UnparseableResult(f"unknown node action {kind!r}")


def optimize_node(
    node,
    suggestions: list[str],
    backend: Backend,
    *,
    lr: LearningRate | LRLevel = LRLevel.MODERATE,
    trace: OptimizerTrace | None = None,
    max_tokens: int = 1024,
    model_id: str = "",
) -> list[OptimizerAction]:
    """Map the node optimizer's JSON action list onto config mutations.

    Candidate actions are legality-checked against the node before being
    returned; a reply that stays unusable for three attempts is dropped.
    """
    if not suggestions:
        raise ValueError("optimize_node needs at least one suggestion")
    numbered = "\n\n".join(
        f"# Example {i}\n{suggestion}" for i, suggestion in enumerate(suggestions, start=1)
    )
    body = fill_slots(
        NODE_OPTIMIZER_TEMPLATE,
        node_config=node_config_text(node),
        suggestions=numbered,
    )
    request = _user_request(body, Purpose.OPTIMIZER_NODE, lr, max_tokens, model_id)

    def parse(reply: str) -> list[OptimizerAction]:
        data = _result_json(reply)
        if not isinstance(data, list):
            raise UnparseableResult("<result> must be a JSON list")
        parsed = []
        for record in data:
            if not isinstance(record, dict):
                raise UnparseableResult(f"list element {record!r} is not a dict")
            parsed.append(_node_action_from_record(record, node.name))
        # Legality check against a scratch single-node pipeline.
        scratch = AgentConfig(pipeline=PipelineSpec(nodes=[copy.deepcopy(node)]))
        for action in parsed:
            scratch = apply_action(scratch, action)
        return parsed

    corrective = (
        "Reply with a JSON list of action dicts enclosed in <result></result>, using only "
        "the supported actions."
    )
    actions = _attempt_loop(backend, request, parse, corrective, trace)
    return actions if actions is not None else []


# --- Pipeline optimizer ----------------------------------------------------------


def _pipeline_action_from_record(record: dict) -> OptimizerAction:
    kind = record.get("action")
    try:
        if kind == "add_node":
            return NodeAdd(int(record["position"]), node_from_dict(record["node"], "node"))
        if kind == "delete_node":
            return NodeDelete(record["node"])
        if kind == "move_node":
            return NodeMove(record["node"], int(record["position"]))
    except (KeyError, TypeError, ValueError) as err:
        raise UnparseableResult(f"bad {kind!r} record: {err}") from None
    raise UnparseableResult(f"unknown pipeline action {kind!r}")


def optimize_pipeline(
    config: AgentConfig,
    gradients: list[LanguageGradient],
    lr: LearningRate | LRLevel = LRLevel.MODERATE,
    backend: Backend | None = None,
    *,
    trace: OptimizerTrace | None = None,
    max_tokens: int = 2048,
    model_id: str = "",
) -> list[OptimizerAction]:
    """One request over the whole pipeline; actions restricted to add/delete/move."""
    if backend is None:
        raise ValueError("optimize_pipeline needs a backend")
    covered = {g.node_name for g in gradients}
    missing = [n for n in config.pipeline.node_names() if n not in covered]
    if missing:
        raise ValueError(f"gradients missing for nodes: {missing}")

    sections = []
    for name in config.pipeline.node_names():
        for i, gradient in enumerate(
            (g for g in gradients if g.node_name == name), start=1
        ):
            sections.append(f"# Node: {name} (example {i})\n{gradient.suggestion_for_node}")
    doc = config_to_dict(config)
    doc.pop("version", None)
    doc.pop("parent_version", None)
    body = fill_slots(
        PIPELINE_OPTIMIZER_TEMPLATE,
        pipeline_config=json.dumps(doc, indent=2, ensure_ascii=False),
        gradients="\n\n".join(sections),
    )
    request = _user_request(body, Purpose.OPTIMIZER_PIPELINE, lr, max_tokens, model_id)

    def parse(reply: str) -> list[OptimizerAction]:
        data = _result_json(reply)
        if not isinstance(data, list):
            raise UnparseableResult("<result> must be a JSON list")
        parsed = []
        for record in data:
            if not isinstance(record, dict):
                raise UnparseableResult(f"list element {record!r} is not a dict")
            parsed.append(_pipeline_action_from_record(record))
        scratch = config
        for action in parsed:  # illegal updates count toward the retry budget
            scratch = apply_action(scratch, action)
        return parsed

    corrective = (
        "Reply with a JSON list of add_node/delete_node/move_node dicts enclosed in "
        "<result></result>."
    )
    actions = _attempt_loop(backend, request, parse, corrective, trace)
    return actions if actions is not None else []


# --- rollback ---------------------------------------------------------------------

PAIRWISE_TEMPLATE = """You are judging two candidate outputs for the same task.

Task description:
{task}

Input:
{input}

First output:
<result>{first}</result>

Second output:
<result>{second}</result>

Which output better satisfies the task? Reply with <result>first</result>, <result>second</result>, or <result>tie</result>."""


def _pairwise_prefers_original(
    task: str,
    agent_input: str,
    original_output: str,
    candidate_output: str,
    backend: Backend,
    model_id: str = "",
) -> bool:
    body = fill_slots(
        PAIRWISE_TEMPLATE,
        task=task,
        input=agent_input,
        first=original_output,
        second=candidate_output,
    )
    request = ChatRequest(
        messages=[Message("user", body)],
        purpose=Purpose.LOSS,
        temperature=0.0,
        model_id=model_id,
    )
    verdict = extract_tag(backend.complete(request).text, "result")
    # Roll back only on a clear preference for the original.
    return verdict is not None and verdict.strip().lower() == "first"


def apply_with_rollback(
    config: AgentConfig,
    actions: list[OptimizerAction],
    example: Example,
    backend: Backend,
    rollback_enabled: bool = True,
    *,
    original_loss: LanguageLoss | None = None,
    original_output: str | None = None,
    use_ground_truth: bool = True,
    external_score_fn: Callable[[str], tuple[float, str]] | None = None,
    seed: int = 0,
    tools_enabled: bool = False,
    tool_handlers=None,
    forward_temperature: float = 0.0,
    model_id: str = "",
) -> tuple[AgentConfig, UpdateOutcome]:
    """Apply actions, re-run the example, and keep or revert the candidate.

    The candidate is reverted only when its loss score is strictly lower
    than the original's; ties keep the update.  Without numeric scores a
    pairwise judgment call decides.
    """
    pre_version = config.version
    if not actions:
        return config, UpdateOutcome(UpdateStatus.NO_CHANGE, [], None, pre_version, pre_version)

    candidate = config
    applied: list[OptimizerAction] = []
    skipped: list[str] = []
    for action in actions:
        try:
            candidate = apply_action(candidate, action)
            applied.append(action)
        except IllegalAction as err:
            skipped.append(str(err))
    if not applied:
        return config, UpdateOutcome(
            UpdateStatus.REJECTED, list(actions), "; ".join(skipped), pre_version, pre_version
        )
    reason = f"skipped illegal actions: {'; '.join(skipped)}" if skipped else None

    if not rollback_enabled:
        return candidate, UpdateOutcome(
            UpdateStatus.APPLIED, applied, reason, pre_version, candidate.version
        )

    try:
        trajectory = run_pipeline(
            candidate,
            example.input,
            backend,
            seed=seed,
            tool_handlers=tool_handlers,
            tools_enabled=tools_enabled,
            forward_temperature=forward_temperature,
            model_id=model_id,
        )
        ground_truth = example.ground_truth if use_ground_truth else None
        external = (
            external_score_fn(trajectory.final_output)
            if external_score_fn is not None and ground_truth is not None
            else None
        )
        candidate_loss = compute_loss(
            trajectory,
            backend,
            ground_truth=ground_truth,
            external_score=external,
            model_id=model_id,
        )
    except (ScriptExhausted, ScriptMismatch):
        raise  # a scripted scenario bug, not a model regression
    except EngineError as err:
        return config, UpdateOutcome(
            UpdateStatus.ROLLED_BACK,
            applied,
            f"candidate evaluation failed: {err}",
            pre_version,
            pre_version,
        )

    original_score = original_loss.score if original_loss is not None else None
    if original_score is not None and candidate_loss.score is not None:
        keep = candidate_loss.score >= original_score
        detail = f"score {original_score} -> {candidate_loss.score}"
    else:
        prefers_original = _pairwise_prefers_original(
            config.global_task_description,
            example.input,
            original_output or "",
            trajectory.final_output,
            backend,
            model_id=model_id,
        )
        keep = not prefers_original
        detail = "pairwise judgment"

    if keep:
        return candidate, UpdateOutcome(
            UpdateStatus.APPLIED,
            applied,
            reason or detail,
            pre_version,
            candidate.version,
        )
    return config, UpdateOutcome(
        UpdateStatus.ROLLED_BACK, applied, detail, pre_version, pre_version
    )
