"""Validated atomic mutations of an agent config.

Each action is a small record; ``apply_action`` copies the config, applies
the mutation, re-validates, and bumps the version.  The input config is
never modified, so any intermediate config remains runnable.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Union

from .errors import IllegalAction, InvariantViolation, UnbalancedBraces
from .model import (
    PROMPT_COMPONENTS,
    AgentConfig,
    Controller,
    NodeSpec,
    PromptTemplate,
    ToolSpec,
    ToolStatus,
    extract_placeholders,
    validate,
)


@dataclass
class PromptComponentUpdate:
    node: str
    role: str
    component: str
    new_text: str


@dataclass
class ToolEdit:
    node: str
    tool: str
    new_description: str


@dataclass
class ToolDelete:
    node: str
    tool: str


@dataclass
class ToolCreate:
    node: str
    tool_spec: ToolSpec


@dataclass
class NodeDescriptionUpdate:
    node: str
    new_text: str


@dataclass
class ControllerUpdate:
    node: str
    controller: Controller


@dataclass
class RoleAdd:
    node: str
    role: str
    template: PromptTemplate


@dataclass
class RoleDelete:
    node: str
    role: str
    # Deleting the begin role is legal only with an explicit reassignment
    # bundled into the same action.
    new_begin_role: str | None = None


@dataclass
class RoleUpdate:
    node: str
    role: str
    new_template: PromptTemplate


@dataclass
class NodeAdd:
    position: int
    node_spec: NodeSpec


@dataclass
class NodeDelete:
    node: str


@dataclass
class NodeMove:
    node: str
    new_position: int


OptimizerAction = Union[
    PromptComponentUpdate,
    ToolEdit,
    ToolDelete,
    ToolCreate,
    NodeDescriptionUpdate,
    ControllerUpdate,
    RoleAdd,
    RoleDelete,
    RoleUpdate,
    NodeAdd,
    NodeDelete,
    NodeMove,
]


def _find_node(config: AgentConfig, name: str) -> NodeSpec:
    for node in config.pipeline.nodes:
        if node.name == name:
            return node
    raise IllegalAction(f"no node named {name!r}")


def _find_tool(node: NodeSpec, name: str) -> ToolSpec:
    for tool in node.tools:
        if tool.name == name:
            return tool
    raise IllegalAction(f"node {node.name!r} has no tool named {name!r}")


def placeholder_preserving(old_text: str, new_text: str) -> bool:
    """True when ``new_text`` keeps exactly the `{}` slot set of ``old_text``."""
    try:
        return extract_placeholders(new_text) == extract_placeholders(old_text)
    except UnbalancedBraces:
        return False


def _apply_prompt_update(config: AgentConfig, action: PromptComponentUpdate) -> None:
    node = _find_node(config, action.node)
    if action.role not in node.roles:
        raise IllegalAction(f"node {action.node!r} has no role {action.role!r}")
    if action.component not in PROMPT_COMPONENTS:
        raise IllegalAction(f"unknown prompt component {action.component!r}")
    template = node.roles[action.role]
    old_text = template.component_text(action.component)
    if not placeholder_preserving(old_text, action.new_text):
        raise IllegalAction(
            f"update to {action.component} of {action.node}/{action.role} "
            "changes the placeholder set"
        )
    if action.component == "few_shot_examples":
        # Few-shot examples are edited as one blank-line separated block.
        template.few_shot_examples = [
            part for part in action.new_text.split("\n\n") if part.strip()
        ]
    else:
        setattr(template, action.component, action.new_text)


def _apply_role_delete(config: AgentConfig, action: RoleDelete) -> None:
    node = _find_node(config, action.node)
    if action.role not in node.roles:
        raise IllegalAction(f"node {action.node!r} has no role {action.role!r}")
    if len(node.roles) == 1:
        raise IllegalAction(f"cannot delete the only role of node {action.node!r}")
    if action.role == node.begin_role:
        if action.new_begin_role is None:
            raise IllegalAction(
                f"deleting begin role {action.role!r} needs an explicit reassignment"
            )
        if action.new_begin_role not in node.roles or action.new_begin_role == action.role:
            raise IllegalAction(
                f"new begin role {action.new_begin_role!r} is not a remaining role"
            )
        node.begin_role = action.new_begin_role
    del node.roles[action.role]


def _apply_node_add(config: AgentConfig, action: NodeAdd) -> None:
    nodes = config.pipeline.nodes
    if not 0 <= action.position <= len(nodes):
        raise IllegalAction(f"node position {action.position} out of range")
    if any(n.name == action.node_spec.name for n in nodes):
        raise IllegalAction(f"node {action.node_spec.name!r} already exists")
    nodes.insert(action.position, action.node_spec)


def _apply_node_move(config: AgentConfig, action: NodeMove) -> None:
    nodes = config.pipeline.nodes
    _find_node(config, action.node)
    if not 0 <= action.new_position < len(nodes):
        raise IllegalAction(f"move position {action.new_position} out of range")
    index = next(i for i, n in enumerate(nodes) if n.name == action.node)
    node = nodes.pop(index)
    nodes.insert(action.new_position, node)


def apply_action(config: AgentConfig, action: OptimizerAction) -> AgentConfig:
    """Return a new config with ``action`` applied and the version bumped.

    Raises :class:`IllegalAction` when the result would violate any
    invariant; the input config is left untouched either way.
    """
    updated = copy.deepcopy(config)

    if isinstance(action, PromptComponentUpdate):
        _apply_prompt_update(updated, action)
    elif isinstance(action, ToolEdit):
        node = _find_node(updated, action.node)
        tool = _find_tool(node, action.tool)
        tool.description = action.new_description
    elif isinstance(action, ToolDelete):
        node = _find_node(updated, action.node)
        tool = _find_tool(node, action.tool)
        node.tools.remove(tool)
    elif isinstance(action, ToolCreate):
        node = _find_node(updated, action.node)
        if any(t.name == action.tool_spec.name for t in node.tools):
            raise IllegalAction(
                f"node {action.node!r} already has a tool named {action.tool_spec.name!r}"
            )
        node.tools.append(copy.deepcopy(action.tool_spec))
    elif isinstance(action, NodeDescriptionUpdate):
        _find_node(updated, action.node).description = action.new_text
    elif isinstance(action, ControllerUpdate):
        _find_node(updated, action.node).controller = copy.deepcopy(action.controller)
    elif isinstance(action, RoleAdd):
        node = _find_node(updated, action.node)
        if action.role in node.roles:
            raise IllegalAction(f"node {action.node!r} already has role {action.role!r}")
        node.roles[action.role] = copy.deepcopy(action.template)
    elif isinstance(action, RoleDelete):
        _apply_role_delete(updated, action)
    elif isinstance(action, RoleUpdate):
        node = _find_node(updated, action.node)
        if action.role not in node.roles:
            raise IllegalAction(f"node {action.node!r} has no role {action.role!r}")
        node.roles[action.role] = copy.deepcopy(action.new_template)
    elif isinstance(action, NodeAdd):
        _apply_node_add(updated, action)
    elif isinstance(action, NodeDelete):
        if len(updated.pipeline.nodes) == 1:
            raise IllegalAction("cannot delete the only node of the pipeline")
        node = _find_node(updated, action.node)
        updated.pipeline.nodes.remove(node)
    elif isinstance(action, NodeMove):
        _apply_node_move(updated, action)
    else:
        raise IllegalAction(f"unknown action type {type(action).__name__}")

    updated.parent_version = config.version
    updated.version = config.version + 1
    try:
        validate(updated)
    except InvariantViolation as err:
        raise IllegalAction(str(err)) from err
    return updated


def apply_all(config: AgentConfig, actions: list[OptimizerAction]) -> AgentConfig:
    """Apply a sequence of actions, bumping the version once per action."""
    for action in actions:
        config = apply_action(config, action)
    return config


# --- serialization (audit log / replay) -------------------------------------


def _template_to_dict(template: PromptTemplate) -> dict:
    return {
        "task_description": template.task_description,
        "few_shot_examples": list(template.few_shot_examples),
        "principles": template.principles,
        "output_format_control": template.output_format_control,
    }


def _template_from_dict(data: dict) -> PromptTemplate:
    return PromptTemplate(
        task_description=data.get("task_description", ""),
        few_shot_examples=list(data.get("few_shot_examples", [])),
        principles=data.get("principles", ""),
        output_format_control=data.get("output_format_control", ""),
    )


def action_to_dict(action: OptimizerAction) -> dict:
    # Local import: config_io provides node/controller/tool codecs.
    from . import config_io

    if isinstance(action, PromptComponentUpdate):
        return {
            "kind": "prompt_component_update",
            "node": action.node,
            "role": action.role,
            "component": action.component,
            "new_text": action.new_text,
        }
    if isinstance(action, ToolEdit):
        return {
            "kind": "tool_edit",
            "node": action.node,
            "tool": action.tool,
            "new_description": action.new_description,
        }
    if isinstance(action, ToolDelete):
        return {"kind": "tool_delete", "node": action.node, "tool": action.tool}
    if isinstance(action, ToolCreate):
        return {
            "kind": "tool_create",
            "node": action.node,
            "tool_spec": config_io.tool_to_dict(action.tool_spec),
        }
    if isinstance(action, NodeDescriptionUpdate):
        return {
            "kind": "node_description_update",
            "node": action.node,
            "new_text": action.new_text,
        }
    if isinstance(action, ControllerUpdate):
        return {
            "kind": "controller_update",
            "node": action.node,
            "controller": config_io.controller_to_dict(action.controller),
        }
    if isinstance(action, RoleAdd):
        return {
            "kind": "role_add",
            "node": action.node,
            "role": action.role,
            "template": _template_to_dict(action.template),
        }
    if isinstance(action, RoleDelete):
        return {
            "kind": "role_delete",
            "node": action.node,
            "role": action.role,
            "new_begin_role": action.new_begin_role,
        }
    if isinstance(action, RoleUpdate):
        return {
            "kind": "role_update",
            "node": action.node,
            "role": action.role,
            "template": _template_to_dict(action.new_template),
        }
    if isinstance(action, NodeAdd):
        return {
            "kind": "node_add",
            "position": action.position,
            "node_spec": config_io.node_to_dict(action.node_spec),
        }
    if isinstance(action, NodeDelete):
        return {"kind": "node_delete", "node": action.node}
    if isinstance(action, NodeMove):
        return {
            "kind": "node_move",
            "node": action.node,
            "new_position": action.new_position,
        }
    raise ValueError(f"unknown action type {type(action).__name__}")


def action_from_dict(data: dict) -> OptimizerAction:
    from . import config_io

    kind = data.get("kind")
    if kind == "prompt_component_update":
        return PromptComponentUpdate(
            data["node"], data["role"], data["component"], data["new_text"]
        )
    if kind == "tool_edit":
        return ToolEdit(data["node"], data["tool"], data["new_description"])
    if kind == "tool_delete":
        return ToolDelete(data["node"], data["tool"])
    if kind == "tool_create":
        return ToolCreate(data["node"], config_io.tool_from_dict(data["tool_spec"]))
    if kind == "node_description_update":
        return NodeDescriptionUpdate(data["node"], data["new_text"])
    if kind == "controller_update":
        return ControllerUpdate(
            data["node"], config_io.controller_from_dict(data["controller"])
        )
    if kind == "role_add":
        return RoleAdd(data["node"], data["role"], _template_from_dict(data["template"]))
    if kind == "role_delete":
        return RoleDelete(data["node"], data["role"], data.get("new_begin_role"))
    if kind == "role_update":
        return RoleUpdate(
            data["node"], data["role"], _template_from_dict(data["template"])
        )
    if kind == "node_add":
        return NodeAdd(data["position"], config_io.node_from_dict(data["node_spec"]))
    if kind == "node_delete":
        return NodeDelete(data["node"])
    if kind == "node_move":
        return NodeMove(data["node"], data["new_position"])
    raise ValueError(f"unknown action kind {kind!r}")
