"""Shared builders for configs and scripted backends."""

from __future__ import annotations

import pytest

from symgrad import (
    AgentConfig,
    Controller,
    NodeSpec,
    PipelineSpec,
    PromptTemplate,
    Purpose,
    RouteType,
    ScriptedBackend,
    ScriptEntry,
    ScriptMode,
    ToolSpec,
)
from symgrad.model import ToolParam


def make_template(task="Answer: {input}", few_shot=None, principles="", fmt=""):
    return PromptTemplate(
        task_description=task,
        few_shot_examples=list(few_shot or []),
        principles=principles,
        output_format_control=fmt,
    )


def make_node(
    name="solve",
    description="Produce the answer.",
    roles=None,
    begin_role=None,
    controller=None,
    tools=None,
    max_role_turns=8,
):
    roles = roles or {"solver": make_template()}
    return NodeSpec(
        name=name,
        description=description,
        begin_role=begin_role or next(iter(roles)),
        roles=roles,
        controller=controller or Controller(route_type=RouteType.ORDER),
        tools=list(tools or []),
        max_role_turns=max_role_turns,
    )


def make_config(nodes=None, task="Answer the question."):
    nodes = nodes or [make_node()]
    return AgentConfig(pipeline=PipelineSpec(nodes=nodes), global_task_description=task)


def make_chain_config(names=("plan", "write", "revise"), task="Write a passage."):
    nodes = [
        make_node(name=name, description=f"{name} step", roles={"worker": make_template()})
        for name in names
    ]
    return make_config(nodes=nodes, task=task)


def make_search_tool(name="search", status=None):
    from symgrad import ToolStatus

    return ToolSpec(
        name=name,
        description="Look up a query on the web.",
        parameters=[ToolParam(name="q", type="string", required=True, description="query")],
        status=status or ToolStatus.ACTIVE,
    )


def rule(response, purpose=None, substring=None):
    return ScriptEntry(response=response, purpose=purpose, substring=substring)


def match_any(*entries):
    return ScriptedBackend(list(entries), ScriptMode.MATCH_ANY)


def strict(*entries):
    return ScriptedBackend(list(entries), ScriptMode.STRICT_SEQUENCE)


def grad_reply(suggestion="improve clarity", requirement="provide cleaner input"):
    return f"<suggestion>{suggestion}</suggestion><suggestion>{requirement}</suggestion>"


def loss_reply(score=6, suggestion="tighten the answer"):
    return f"<score>{score}</score><suggestion>{suggestion}</suggestion>"


EMPTY_NEW_PROMPT = "<analyse>fine as is</analyse><new_prompt></new_prompt>"


def baseline_rules(forward_text="out"):
    """Rules for a run where every optimizer declines to change anything."""
    return [
        rule(forward_text, purpose=Purpose.AGENT_FORWARD),
        rule(loss_reply(), purpose=Purpose.LOSS),
        rule(grad_reply(), purpose=Purpose.GRADIENT_PROMPT),
        rule(grad_reply(), purpose=Purpose.GRADIENT_NODE),
        rule(EMPTY_NEW_PROMPT, purpose=Purpose.OPTIMIZER_PROMPT),
        rule("<result>[]</result>", purpose=Purpose.OPTIMIZER_TOOL),
        rule("<result>[]</result>", purpose=Purpose.OPTIMIZER_NODE),
        rule("<analyse>ok</analyse><result>[]</result>", purpose=Purpose.OPTIMIZER_PIPELINE),
    ]


@pytest.fixture
def one_node_config():
    return make_config()


@pytest.fixture
def three_node_config():
    return make_chain_config()
