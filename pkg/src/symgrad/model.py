"""The agent's symbolic weight space: pipeline, nodes, roles, prompts, tools.

Everything here is treated as an immutable value; mutation happens only
through :func:`symgrad.actions.apply_action`, which returns a new config.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum

from .errors import InvariantViolation, MissingVariable, UnbalancedBraces

# Variables the runtime supplies when rendering role prompts.  Validation
# keeps role templates inside this vocabulary so that every config that
# passes validate() is guaranteed to render at execution time.
RENDER_VARS = frozenset({"input", "task", "node_description"})

PROMPT_COMPONENTS = (
    "task_description",
    "few_shot_examples",
    "principles",
    "output_format_control",
)

_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")


def extract_placeholders(text: str) -> set[str]:
    """Return the distinct `{slot}` names in ``text``.

    Doubled braces (`{{`, `}}`) are literals, not slots.  Raises
    :class:`UnbalancedBraces` for unclosed, stray, or malformed slots.
    """
    names: set[str] = set()
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch == "{":
            if i + 1 < n and text[i + 1] == "{":
                i += 2
                continue
            end = text.find("}", i + 1)
            if end == -1:
                raise UnbalancedBraces(f"unclosed '{{' at offset {i}")
            inner = text[i + 1 : end]
            if "{" in inner:
                raise UnbalancedBraces(f"nested '{{' inside slot at offset {i}")
            if not _IDENT.match(inner):
                raise UnbalancedBraces(f"slot name {inner!r} is not an identifier")
            names.add(inner)
            i = end + 1
        elif ch == "}":
            if i + 1 < n and text[i + 1] == "}":
                i += 2
                continue
            raise UnbalancedBraces(f"stray '}}' at offset {i}")
        else:
            i += 1
    return names


def render_template_text(text: str, variables: dict[str, str]) -> str:
    """Substitute every `{slot}` in ``text``; `{{`/`}}` become literal braces.

    Substituted values are inserted verbatim and never re-scanned, so data
    containing braces cannot smuggle in new slots.
    """
    out: list[str] = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch == "{":
            if i + 1 < n and text[i + 1] == "{":
                out.append("{")
                i += 2
                continue
            end = text.find("}", i + 1)
            if end == -1:
                raise UnbalancedBraces(f"unclosed '{{' at offset {i}")
            name = text[i + 1 : end]
            if not _IDENT.match(name):
                raise UnbalancedBraces(f"slot name {name!r} is not an identifier")
            if name not in variables:
                raise MissingVariable(name)
            out.append(variables[name])
            i = end + 1
        elif ch == "}":
            if i + 1 < n and text[i + 1] == "}":
                out.append("}")
                i += 2
                continue
            raise UnbalancedBraces(f"stray '}}' at offset {i}")
        else:
            out.append(ch)
            i += 1
    return "".join(out)


@dataclass
class PromptTemplate:
    """One role's prompt, split into four independently optimizable components."""

    task_description: str = ""
    few_shot_examples: list[str] = field(default_factory=list)
    principles: str = ""
    output_format_control: str = ""

    @property
    def placeholders(self) -> set[str]:
        return extract_placeholders(self.joined())

    def component_text(self, component: str) -> str:
        if component not in PROMPT_COMPONENTS:
            raise ValueError(f"unknown prompt component: {component!r}")
        if component == "few_shot_examples":
            return "\n\n".join(self.few_shot_examples)
        return getattr(self, component)

    def joined(self) -> str:
        """All components concatenated in fixed order, blank-line separated."""
        parts = [self.component_text(c) for c in PROMPT_COMPONENTS]
        return "\n\n".join(p for p in parts if p)

    def render(self, variables: dict[str, str]) -> str:
        missing = sorted(self.placeholders - set(variables))
        if missing:
            raise MissingVariable(missing[0])
        return render_template_text(self.joined(), variables)


def render_prompt(template: PromptTemplate, variables: dict[str, str]) -> str:
    """Render ``template`` with ``variables`` (keys must cover its placeholders)."""
    return template.render(variables)


class ToolStatus(str, Enum):
    ACTIVE = "active"
    DISABLED = "disabled"


@dataclass
class ToolParam:
    name: str
    type: str = "string"
    required: bool = True
    description: str = ""


@dataclass
class ToolSpec:
    name: str
    description: str = ""
    parameters: list[ToolParam] = field(default_factory=list)
    implementation_source: str | None = None
    status: ToolStatus = ToolStatus.ACTIVE


class RouteType(str, Enum):
    RANDOM = "random"
    ORDER = "order"
    LLM = "llm"


@dataclass
class Controller:
    route_type: RouteType = RouteType.ORDER
    route_system_prompt: str | None = None
    route_last_prompt: str | None = None


DEFAULT_MAX_ROLE_TURNS = 8


@dataclass
class NodeSpec:
    name: str
    description: str
    begin_role: str
    roles: dict[str, PromptTemplate]
    controller: Controller = field(default_factory=Controller)
    tools: list[ToolSpec] = field(default_factory=list)
    max_role_turns: int = DEFAULT_MAX_ROLE_TURNS

    def role_names(self) -> list[str]:
        return list(self.roles)


@dataclass
class PipelineSpec:
    nodes: list[NodeSpec]

    def node(self, name: str) -> NodeSpec:
        for node in self.nodes:
            if node.name == name:
                return node
        raise KeyError(name)

    def index_of(self, name: str) -> int:
        for i, node in enumerate(self.nodes):
            if node.name == name:
                return i
        raise KeyError(name)

    def node_names(self) -> list[str]:
        return [n.name for n in self.nodes]


@dataclass
class AgentConfig:
    pipeline: PipelineSpec
    global_task_description: str = ""
    version: int = 0
    parent_version: int | None = None


def _check(condition: bool, path: str, reason: str) -> None:
    if not condition:
        raise InvariantViolation(path, reason)


def validate(config: AgentConfig) -> None:
    """Check every structural invariant; raise InvariantViolation on the first breach."""
    _check(config.version >= 0, "version", "must be >= 0")
    if config.parent_version is not None:
        _check(
            config.parent_version < config.version,
            "parent_version",
            "must be smaller than version",
        )
    _check(len(config.pipeline.nodes) >= 1, "nodes", "pipeline needs at least one node")

    seen_nodes: set[str] = set()
    for i, node in enumerate(config.pipeline.nodes):
        path = f"nodes[{i}]"
        _check(bool(_IDENT.match(node.name)), f"{path}.name", "must be an identifier")
        _check(node.name not in seen_nodes, f"{path}.name", f"duplicate node name {node.name!r}")
        seen_nodes.add(node.name)
        _check(len(node.roles) >= 1, f"{path}.roles", "node needs at least one role")
        _check(
            node.begin_role in node.roles,
            f"{path}.begin_role",
            f"{node.begin_role!r} is not one of the declared roles",
        )
        _check(node.max_role_turns >= 1, f"{path}.max_role_turns", "must be >= 1")

        for role, template in node.roles.items():
            rpath = f"{path}.roles[{role}]"
            _check(bool(_IDENT.match(role)), rpath, "role name must be an identifier")
            try:
                slots = template.placeholders
            except UnbalancedBraces as err:
                raise InvariantViolation(rpath, str(err)) from err
            unknown = sorted(slots - RENDER_VARS)
            _check(
                not unknown,
                rpath,
                f"placeholders {unknown} are outside the render vocabulary {sorted(RENDER_VARS)}",
            )

        controller = node.controller
        if controller.route_type is RouteType.LLM:
            _check(
                bool(controller.route_system_prompt),
                f"{path}.controller.route_system_prompt",
                "required and non-empty for llm routing",
            )
            _check(
                bool(controller.route_last_prompt),
                f"{path}.controller.route_last_prompt",
                "required and non-empty for llm routing",
            )

        seen_tools: set[str] = set()
        for j, tool in enumerate(node.tools):
            tpath = f"{path}.tools[{j}]"
            _check(bool(_IDENT.match(tool.name)), f"{tpath}.name", "must be an identifier")
            _check(
                tool.name not in seen_tools,
                f"{tpath}.name",
                f"duplicate tool name {tool.name!r}",
            )
            seen_tools.add(tool.name)
            if tool.status is ToolStatus.ACTIVE:
                _check(
                    bool(tool.description),
                    f"{tpath}.description",
                    "active tools need a non-empty description",
                )


def is_valid(config: AgentConfig) -> bool:
    try:
        validate(config)
    except InvariantViolation:
        return False
    return True
