"""Pipeline execution: role routing, prompt rendering, tool calls.

A run produces a Trajectory — the complete tape of inputs, outputs,
prompt snapshots, and tool usage per node — which the learning loop
later annotates with a loss and per-node gradients.
"""

from __future__ import annotations

import dataclasses
import json
import random
import re
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable

from .errors import (
    BackendError,
    MalformedToolBlock,
    RoleLoopExceeded,
    UnknownRoleFromRouter,
)
from .gateway import Backend, ChatRequest, Message, Purpose
from .model import AgentConfig, Controller, NodeSpec, RouteType, ToolSpec, ToolStatus

if TYPE_CHECKING:
    from .backprop import LanguageGradient
    from .loss import LanguageLoss

# Bit-exact token an llm router replies with to end a node's role loop.
ROUTE_END_TOKEN = "<end/>"

ToolHandler = Callable[[str], str]

_TOOL_OPEN = re.compile(r'<tool name="([^"]*)">')
_TOOL_BLOCK = re.compile(r'<tool name="([^"]*)">(.*?)</tool>', re.DOTALL)


@dataclass
class ToolCall:
    name: str
    arguments: str
    known: bool = True


@dataclass
class ToolRecord:
    name: str
    arguments: str
    result: str = ""
    error: str | None = None


@dataclass
class RoleTurn:
    role: str
    rendered_prompt: str
    response: str


@dataclass
class NodeRecord:
    node_name: str
    node_input: str = ""
    node_output: str = ""
    prompt_snapshot: dict[str, str] = field(default_factory=dict)
    role_transcript: list[RoleTurn] = field(default_factory=list)
    tool_calls: list[ToolRecord] = field(default_factory=list)
    gradient: "LanguageGradient | None" = None
    node_gradient: "LanguageGradient | None" = None


@dataclass
class Trajectory:
    agent_version: int
    task_description: str
    agent_input: str
    records: list[NodeRecord] = field(default_factory=list)
    final_output: str = ""
    loss: "LanguageLoss | None" = None

    def record_for(self, node_name: str) -> NodeRecord | None:
        for record in self.records:
            if record.node_name == node_name:
                return record
        return None


def parse_tool_calls(response_text: str, node: NodeSpec) -> list[ToolCall]:
    """Extract `<tool name="...">args</tool>` blocks from a role response.

    Unknown tool names are returned flagged, not rejected; an opening tag
    without its closing tag raises MalformedToolBlock.
    """
    blocks = _TOOL_BLOCK.findall(response_text)
    opens = _TOOL_OPEN.findall(response_text)
    if len(opens) != len(blocks):
        raise MalformedToolBlock("unclosed <tool> block in response")
    declared = {tool.name for tool in node.tools}
    return [ToolCall(name, args, known=name in declared) for name, args in blocks]


def execute_tool(
    call: ToolCall, registry: dict[str, tuple[ToolSpec, ToolHandler | None]]
) -> ToolRecord:
    """Run one tool call; failures become recorded text, never exceptions."""
    if not call.known or call.name not in registry:
        return ToolRecord(call.name, call.arguments, error=f"unknown tool: {call.name}")
    spec, handler = registry[call.name]
    if spec.status is not ToolStatus.ACTIVE:
        return ToolRecord(call.name, call.arguments, error="tool disabled")
    if handler is None:
        return ToolRecord(
            call.name, call.arguments, error=f"no handler registered for tool: {call.name}"
        )
    try:
        result = handler(call.arguments)
    except Exception as err:  # failures are learning signal, not crashes
        return ToolRecord(call.name, call.arguments, error=f"tool error: {err}")
    return ToolRecord(call.name, call.arguments, result=str(result))


def _role_sequence(node: NodeSpec) -> list[str]:
    names = node.role_names()
    start = names.index(node.begin_role)
    return names[start:]


def _routing_digest(transcript: list[RoleTurn]) -> str:
    return "\n".join(f"[{turn.role}] {turn.response}" for turn in transcript)


def _parse_route_reply(text: str, node: NodeSpec) -> str | None:
    reply = text.strip()
    if reply == ROUTE_END_TOKEN:
        return None
    if reply in node.roles:
        return reply
    raise UnknownRoleFromRouter(text)


def route_next_role(
    controller: Controller,
    node: NodeSpec,
    transcript_so_far: list[RoleTurn],
    backend: Backend | None = None,
    rng_seed: int = 0,
    *,
    turn: int | None = None,
    model_id: str = "",
    forward_temperature: float = 0.0,
) -> str | None:
    """Pick the next role after ``turn`` completed role turns, or None to stop.

    ``order`` walks the declared roles from begin_role and stops after the
    last; ``random`` draws uniformly (seeded) and stops at max_role_turns;
    ``llm`` asks the routing prompts for a role name or the end token.
    """
    if turn is None:
        turn = len(transcript_so_far)

    if controller.route_type is RouteType.ORDER:
        sequence = _role_sequence(node)
        return sequence[turn] if turn < len(sequence) else None

    if controller.route_type is RouteType.RANDOM:
        if turn >= node.max_role_turns:
            return None
        rng = random.Random(rng_seed * 1000003 + turn)
        return rng.choice(node.role_names())

    # llm routing
    if backend is None:
        raise ValueError("llm routing needs a backend")
    request = ChatRequest(
        messages=[
            Message("system", controller.route_system_prompt or ""),
            Message(
                "user",
                _routing_digest(transcript_so_far)
                + "\n\n"
                + (controller.route_last_prompt or ""),
            ),
        ],
        purpose=Purpose.ROUTING,
        temperature=forward_temperature,
        model_id=model_id,
    )
    reply = backend.complete(request).text
    try:
        return _parse_route_reply(reply, node)
    except UnknownRoleFromRouter:
        pass
    options = ", ".join(node.role_names())
    retry = ChatRequest(
        messages=request.messages
        + [
            Message("assistant", reply),
            Message(
                "user",
                f"Reply with exactly one role name from: {options}, "
                f"or {ROUTE_END_TOKEN} to finish this step.",
            ),
        ],
        purpose=Purpose.ROUTING,
        temperature=forward_temperature,
        model_id=model_id,
    )
    reply = backend.complete(retry).text
    try:
        return _parse_route_reply(reply, node)
    except UnknownRoleFromRouter:
        # Second unknown role: terminate the node, last response stands.
        return None


def _conversation(transcript: list[RoleTurn]) -> list[Message]:
    messages: list[Message] = []
    for turn in transcript:
        messages.append(Message("user", turn.rendered_prompt))
        messages.append(Message("assistant", turn.response))
    return messages


def _run_node(
    node: NodeSpec,
    node_input: str,
    config: AgentConfig,
    backend: Backend,
    seed: int,
    tool_handlers: dict[str, ToolHandler],
    tools_enabled: bool,
    forward_temperature: float,
    model_id: str,
) -> NodeRecord:
    variables = {
        "input": node_input,
        "task": config.global_task_description,
        "node_description": node.description,
    }
    snapshot = {role: template.render(variables) for role, template in node.roles.items()}
    record = NodeRecord(node_name=node.name, node_input=node_input, prompt_snapshot=snapshot)
    registry = {tool.name: (tool, tool_handlers.get(tool.name)) for tool in node.tools}

    role = node.begin_role
    turn = 0
    while True:
        if turn >= node.max_role_turns:
            raise RoleLoopExceeded(node.name)
        rendered = snapshot[role]
        request = ChatRequest(
            messages=_conversation(record.role_transcript) + [Message("user", rendered)],
            purpose=Purpose.AGENT_FORWARD,
            temperature=forward_temperature,
            model_id=model_id,
        )
        response = backend.complete(request).text
        record.role_transcript.append(RoleTurn(role, rendered, response))

        if tools_enabled and node.tools:
            calls = parse_tool_calls(response, node)
            if calls:
                results = [execute_tool(call, registry) for call in calls]
                record.tool_calls.extend(results)
                feedback = "\n".join(
                    f"Tool {r.name} returned: {r.error if r.error else r.result}"
                    for r in results
                )
                # One bounded re-invocation of the same role with the results.
                followup = ChatRequest(
                    messages=_conversation(record.role_transcript)
                    + [Message("user", feedback)],
                    purpose=Purpose.AGENT_FORWARD,
                    temperature=forward_temperature,
                    model_id=model_id,
                )
                response = backend.complete(followup).text
                record.role_transcript.append(RoleTurn(role, feedback, response))

        turn += 1
        next_role = route_next_role(
            node.controller,
            node,
            record.role_transcript,
            backend,
            seed,
            turn=turn,
            model_id=model_id,
            forward_temperature=forward_temperature,
        )
        if next_role is None:
            break
        role = next_role

    record.node_output = record.role_transcript[-1].response
    return record


def run_pipeline(
    config: AgentConfig,
    agent_input: str,
    backend: Backend,
    *,
    seed: int = 0,
    tool_handlers: dict[str, ToolHandler] | None = None,
    tools_enabled: bool = True,
    forward_temperature: float = 0.0,
    model_id: str = "",
) -> Trajectory:
    """Execute every node in order, feeding each node the previous output."""
    trajectory = Trajectory(
        agent_version=config.version,
        task_description=config.global_task_description,
        agent_input=agent_input,
    )
    current = agent_input
    try:
        for index, node in enumerate(config.pipeline.nodes):
            record = _run_node(
                node,
                current,
                config,
                backend,
                seed + index,
                tool_handlers or {},
                tools_enabled,
                forward_temperature,
                model_id,
            )
            trajectory.records.append(record)
            current = record.node_output
    except BackendError as err:
        err.partial_trajectory = trajectory  # keep the tape for audit
        raise
    trajectory.final_output = current
    return trajectory


# --- persistence ---------------------------------------------------------------


def trajectory_to_dict(trajectory: Trajectory) -> dict:
    def gradient_dict(gradient):
        return dataclasses.asdict(gradient) if gradient is not None else None

    # Gradients in back-propagation order (last node first), when present.
    gradients = [
        gradient_dict(r.gradient) for r in reversed(trajectory.records) if r.gradient
    ]
    return {
        "agent_version": trajectory.agent_version,
        "input": trajectory.agent_input,
        "records": [
            {
                "node_name": r.node_name,
                "node_input": r.node_input,
                "node_output": r.node_output,
                "prompt_snapshot": dict(r.prompt_snapshot),
                "role_transcript": [
                    {"role": t.role, "rendered_prompt": t.rendered_prompt, "response": t.response}
                    for t in r.role_transcript
                ],
                "tool_calls": [dataclasses.asdict(c) for c in r.tool_calls],
                "gradient": gradient_dict(r.gradient),
                "node_gradient": gradient_dict(r.node_gradient),
            }
            for r in trajectory.records
        ],
        "final_output": trajectory.final_output,
        "loss": dataclasses.asdict(trajectory.loss) if trajectory.loss else None,
        "gradients": gradients or None,
    }


def write_trajectory(trajectory: Trajectory, fh) -> None:
    fh.write(json.dumps(trajectory_to_dict(trajectory), ensure_ascii=False) + "\n")
