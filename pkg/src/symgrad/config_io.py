"""Reading and writing agent configs as canonical JSON documents.

Serialization is deterministic: fixed key order, two-space indent, UTF-8
text with a trailing newline.  Version numbers in files are audit
metadata only; parsing always starts a config at version 0.
"""

from __future__ import annotations

import json
from typing import Any

from .errors import MalformedDocument, SchemaViolation
from .model import (
    AgentConfig,
    Controller,
    NodeSpec,
    PipelineSpec,
    PromptTemplate,
    RouteType,
    ToolParam,
    ToolSpec,
    ToolStatus,
    DEFAULT_MAX_ROLE_TURNS,
    validate,
)


def _expect(value: Any, kind: type, path: str) -> Any:
    if not isinstance(value, kind):
        raise SchemaViolation(path, f"expected {kind.__name__}, got {type(value).__name__}")
    return value


def _get(mapping: dict, key: str, kind: type, path: str, default: Any = ...) -> Any:
    if key not in mapping:
        if default is ...:
            raise SchemaViolation(path, f"missing required key {key!r}")
        return default
    return _expect(mapping[key], kind, f"{path}.{key}")


def _opt_str(mapping: dict, key: str, path: str) -> str | None:
    if key not in mapping or mapping[key] is None:
        return None
    return _expect(mapping[key], str, f"{path}.{key}")


# --- dict codecs --------------------------------------------------------------


def template_to_dict(template: PromptTemplate) -> dict:
    return {
        "task_description": template.task_description,
        "few_shot_examples": list(template.few_shot_examples),
        "principles": template.principles,
        "output_format_control": template.output_format_control,
    }


def template_from_dict(data: Any, path: str) -> PromptTemplate:
    _expect(data, dict, path)
    examples = _get(data, "few_shot_examples", list, path, default=[])
    for i, item in enumerate(examples):
        _expect(item, str, f"{path}.few_shot_examples[{i}]")
    return PromptTemplate(
        task_description=_get(data, "task_description", str, path, default=""),
        few_shot_examples=list(examples),
        principles=_get(data, "principles", str, path, default=""),
        output_format_control=_get(data, "output_format_control", str, path, default=""),
    )


def controller_to_dict(controller: Controller) -> dict:
    return {
        "route_type": controller.route_type.value,
        "route_system_prompt": controller.route_system_prompt,
        "route_last_prompt": controller.route_last_prompt,
    }


def controller_from_dict(data: Any, path: str = "controller") -> Controller:
    _expect(data, dict, path)
    raw = _get(data, "route_type", str, path, default="order")
    try:
        route_type = RouteType(raw)
    except ValueError:
        raise SchemaViolation(f"{path}.route_type", f"unknown route type {raw!r}") from None
    return Controller(
        route_type=route_type,
        route_system_prompt=_opt_str(data, "route_system_prompt", path),
        route_last_prompt=_opt_str(data, "route_last_prompt", path),
    )


def tool_to_dict(tool: ToolSpec) -> dict:
    return {
        "name": tool.name,
        "description": tool.description,
        "parameters": [
            {
                "name": p.name,
                "type": p.type,
                "required": p.required,
                "description": p.description,
            }
            for p in tool.parameters
        ],
        "implementation_source": tool.implementation_source,
        "status": tool.status.value,
    }


def tool_from_dict(data: Any, path: str = "tool") -> ToolSpec:
    _expect(data, dict, path)
    params = []
    for i, raw in enumerate(_get(data, "parameters", list, path, default=[])):
        ppath = f"{path}.parameters[{i}]"
        _expect(raw, dict, ppath)
        params.append(
            ToolParam(
                name=_get(raw, "name", str, ppath),
                type=_get(raw, "type", str, ppath, default="string"),
                required=_get(raw, "required", bool, ppath, default=True),
                description=_get(raw, "description", str, ppath, default=""),
            )
        )
    raw_status = _get(data, "status", str, path, default="active")
    try:
        status = ToolStatus(raw_status)
    except ValueError:
        raise SchemaViolation(f"{path}.status", f"unknown status {raw_status!r}") from None
    return ToolSpec(
        name=_get(data, "name", str, path),
        description=_get(data, "description", str, path, default=""),
        parameters=params,
        implementation_source=_opt_str(data, "implementation_source", path),
        status=status,
    )


def node_to_dict(node: NodeSpec) -> dict:
    return {
        "name": node.name,
        "description": node.description,
        "begin_role": node.begin_role,
        "roles": {role: template_to_dict(t) for role, t in node.roles.items()},
        "controller": controller_to_dict(node.controller),
        "tools": [tool_to_dict(t) for t in node.tools],
        "max_role_turns": node.max_role_turns,
    }


def node_from_dict(data: Any, path: str = "node") -> NodeSpec:
    _expect(data, dict, path)
    roles_raw = _get(data, "roles", dict, path)
    roles = {
        _expect(role, str, f"{path}.roles"): template_from_dict(t, f"{path}.roles[{role}]")
        for role, t in roles_raw.items()
    }
    controller = controller_from_dict(
        data.get("controller", {}), f"{path}.controller"
    )
    tools = [
        tool_from_dict(t, f"{path}.tools[{i}]")
        for i, t in enumerate(_get(data, "tools", list, path, default=[]))
    ]
    return NodeSpec(
        name=_get(data, "name", str, path),
        description=_get(data, "description", str, path, default=""),
        begin_role=_get(data, "begin_role", str, path),
        roles=roles,
        controller=controller,
        tools=tools,
        max_role_turns=_get(data, "max_role_turns", int, path, default=DEFAULT_MAX_ROLE_TURNS),
    )


def config_to_dict(config: AgentConfig) -> dict:
    return {
        "task_description": config.global_task_description,
        "nodes": [node_to_dict(n) for n in config.pipeline.nodes],
        "version": config.version,
        "parent_version": config.parent_version,
    }


# --- document-level API --------------------------------------------------------


def parse_config(source: str) -> AgentConfig:
    """Parse a config document into a validated AgentConfig at version 0."""
    try:
        data = json.loads(source)
    except json.JSONDecodeError as err:
        raise MalformedDocument(f"not valid JSON: {err}") from err
    _expect(data, dict, "$")
    nodes_raw = _get(data, "nodes", list, "$")
    nodes = [node_from_dict(n, f"nodes[{i}]") for i, n in enumerate(nodes_raw)]
    config = AgentConfig(
        pipeline=PipelineSpec(nodes=nodes),
        global_task_description=_get(data, "task_description", str, "$", default=""),
        # File versions are audit-only; the engine owns version numbering.
        version=0,
        parent_version=None,
    )
    validate(config)
    return config


def serialize_config(config: AgentConfig) -> str:
    """Render ``config`` as a canonical JSON document (deterministic bytes)."""
    return json.dumps(config_to_dict(config), indent=2, ensure_ascii=False) + "\n"


def load_config(path: str) -> AgentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def save_config(config: AgentConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_config(config))


def structurally_equal(a: AgentConfig, b: AgentConfig) -> bool:
    """Equality over pipeline and task description; version lineage ignored."""
    da, db = config_to_dict(a), config_to_dict(b)
    for doc in (da, db):
        doc.pop("version", None)
        doc.pop("parent_version", None)
    return da == db


def node_config_text(node: NodeSpec) -> str:
    """A node's config serialized for embedding into engine prompts."""
    return json.dumps(node_to_dict(node), indent=2, ensure_ascii=False)
