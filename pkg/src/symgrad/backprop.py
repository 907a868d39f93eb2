"""Reverse-order gradient generation over a trajectory.

Walks the trajectory from the last node to the first.  Each node's
request carries the requirement chained down from the node after it
(the loss suggestion seeds the last node), and each reply is parsed
into a suggestion for the node itself plus a requirement imposed on
the previous node's output.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum

from .config_io import node_config_text
from .errors import AmbiguousBlocks, GradientParseError, GradientParseFailure, MissingBlock
from .forward import NodeRecord, Trajectory
from .gateway import Backend, ChatRequest, Message, Purpose
from .loss import LanguageLoss, extract_tag, fill_slots
from .model import AgentConfig, NodeSpec

# Bit-exact sentinel the first node may use as its upstream requirement.
FIRST_NODE_SENTINEL = "This is the first node."


class GradientLevel(str, Enum):
    PROMPT = "prompt_level"
    NODE = "node_level"


@dataclass
class LanguageGradient:
    node_name: str
    suggestion_for_node: str
    requirement_for_previous: str
    level: GradientLevel
    raw_response: str
    analysis: str | None = None
    # Snapshot of the node's output for this example; optimizer contexts
    # render it next to the suggestion.
    node_output: str = ""


PROMPT_LEVEL_TEMPLATE = """You are now a prompt fine-tuner for a large language model. You are tasked with providing suggestions for optimizing the prompt template.
Please enclose your suggestions using <suggestion></suggestion>, for example, <suggestion>it could be made shorter</suggestion>.
The task is divided into multiple steps; I will provide you with the output from the previous step, the requirement proposed by the next step for the current output, the current output itself, and the prompt template. You need to suggest improvements for the current step's prompt template.

- The prompt template that needs optimization is: <prompt_template>{prompt_template}</prompt_template>

- The output from the previous step is: <previous_output>{previous_output}</previous_output>

- The current output is: <output>{response}</output>

- The requirement proposed by the next step for the current output is: <requirement>{suggestion}</requirement>

In addition to suggesting modifications for the current prompt template, you also need to propose requirements for the output of the previous step. Please wrap these using <suggestion></suggestion>, for example: <suggestion>the analysis should include a comparison of original data</suggestion>.

Note:
1. Ensure that the results are wrapped with <suggestion></suggestion> and <suggestion></suggestion>, and each tag appears only once.
2. If you are the first node, you can state within <suggestion></suggestion> "This is the first node."
3. Please note that during your analysis, remember that this prompt template will be applied to multiple different datasets, so your suggestions should be general and not solely focused on the examples provided here.
4. Please analyze step by step."""

NODE_LEVEL_TEMPLATE = """You are a large model fine-tuner. Now you need to try to optimize the information of a node. For a complex task, it has been divided into multiple nodes, each of which contains multiple roles that work together to complete the task of this node. Each role is backed by an LLM Agent, and you need to optimize the configuration information of one of the nodes.

Here are the relevant explanations for the Node configuration:
 - The fields in the "controller" indicate the scheduling method of the model. If there is only one role, this item does not need to be optimized:
   - "route_type" indicates the scheduling method, which has three values: "random" means random scheduling, "order" means sequential scheduling, and "llm" means scheduling determined by the LLM model.
   - "route_system_prompt" and "route_last_prompt" are used when "route_type" is "llm" and are respectively the system prompt and last prompt given to the LLM model responsible for scheduling.
 - "begin_role" is a string indicating the name of the starting role of this node.
 - "roles" is a dictionary where the key is the role name, and the value is the prompt used by this role.

You need to decide how to optimize the configuration of this node. Specifically, you need to try to provide suggestions in the following aspects:
1. Update the node description field. This field describes the function of the node and is also an important indicator to measure the performance of a node.
2. Update the scheduling method of the role. Note that if there is only one role, no optimization is needed.
3. Add a new role, and you need to clearly describe the function of this role.
4. Delete a role, and you need to clearly describe the reason for deleting this role.
5. Update a role, and you need to indicate how to update the description of this role.

Next, I will give you a Node configuration, and you need to provide optimization suggestions based on the current Node configuration. Please use <suggestion>[put your suggestion here]</suggestion> to enclose your suggestions.

## Current Node Config
{node_config}

- The requirement proposed by the next step for the current output is: <requirement>{suggestion}</requirement>

You need to first provide your analysis process, then give your optimized result. Please use <analyse></analyse> to enclose the analysis process. Please use <suggestion></suggestion> to enclose the optimization suggestions for the current node. Please use <suggestion></suggestion> to enclose the requirements for the previous node.

Note: The suggestions provided need to be in one or more of the five aspects mentioned above."""


def _score_header(loss: LanguageLoss) -> str:
    return f"Overall score: {loss.score}/10\n\n" if loss.score is not None else ""


def _snapshot_text(record: NodeRecord) -> str:
    if len(record.prompt_snapshot) == 1:
        return next(iter(record.prompt_snapshot.values()))
    return "\n\n".join(
        f"### Role: {role}\n{prompt}" for role, prompt in record.prompt_snapshot.items()
    )


def _tool_usage_section(record: NodeRecord) -> str:
    if not record.tool_calls:
        return ""
    lines = [
        f"- {c.name}({c.arguments}) -> {c.error if c.error else c.result}"
        for c in record.tool_calls
    ]
    return "\n\nTool usage in this step:\n" + "\n".join(lines)


def build_prompt_level_request(
    record: NodeRecord,
    incoming_requirement: str,
    loss: LanguageLoss,
    *,
    max_tokens: int = 1024,
    model_id: str = "",
) -> ChatRequest:
    body = fill_slots(
        PROMPT_LEVEL_TEMPLATE,
        prompt_template=_snapshot_text(record),
        previous_output=record.node_input,
        response=record.node_output,
        suggestion=incoming_requirement,
    )
    content = _score_header(loss) + body + _tool_usage_section(record)
    return ChatRequest(
        messages=[Message("user", content)],
        purpose=Purpose.GRADIENT_PROMPT,
        temperature=0.0,
        max_tokens=max_tokens,
        model_id=model_id,
    )


def build_node_level_request(
    node: NodeSpec,
    incoming_requirement: str,
    loss: LanguageLoss,
    *,
    max_tokens: int = 1024,
    model_id: str = "",
) -> ChatRequest:
    body = fill_slots(
        NODE_LEVEL_TEMPLATE,
        node_config=node_config_text(node),
        suggestion=incoming_requirement,
    )
    return ChatRequest(
        messages=[Message("user", _score_header(loss) + body)],
        purpose=Purpose.GRADIENT_NODE,
        temperature=0.0,
        max_tokens=max_tokens,
        model_id=model_id,
    )


def _suggestion_blocks(text: str) -> list[str]:
    blocks = re.findall(r"<suggestion>(.*?)</suggestion>", text, re.DOTALL)
    opens = text.count("<suggestion>")
    if opens != len(blocks):
        raise AmbiguousBlocks("unclosed <suggestion> tag makes the block count undecidable")
    return blocks


def parse_gradient_response(
    text: str,
    level: GradientLevel,
    *,
    node_name: str = "",
    node_output: str = "",
) -> LanguageGradient:
    """Split a gradient reply into its blocks; positions disambiguate.

    The first suggestion block addresses the node itself, the second is the
    requirement for the previous node; extra blocks are ignored.
    """
    blocks = _suggestion_blocks(text)
    if len(blocks) == 0:
        raise MissingBlock("suggestion_for_node")
    if len(blocks) == 1:
        raise MissingBlock("requirement_for_previous")
    suggestion_for_node = blocks[0].strip()
    requirement = blocks[1].strip()
    if not suggestion_for_node:
        raise MissingBlock("suggestion_for_node")
    if not requirement:
        raise MissingBlock("requirement_for_previous")
    analysis = None
    if level is GradientLevel.NODE:
        raw = extract_tag(text, "analyse")
        analysis = raw.strip() if raw is not None else None
    return LanguageGradient(
        node_name=node_name,
        suggestion_for_node=suggestion_for_node,
        requirement_for_previous=requirement,
        level=level,
        raw_response=text,
        analysis=analysis,
        node_output=node_output,
    )


def _complete_with_reask(
    backend: Backend, request: ChatRequest, level: GradientLevel, record: NodeRecord
) -> LanguageGradient:
    reply = backend.complete(request).text
    try:
        return parse_gradient_response(
            reply, level, node_name=record.node_name, node_output=record.node_output
        )
    except GradientParseError as err:
        note = (
            f"Your previous reply could not be parsed ({type(err).__name__}: {err}). "
            "Answer again with exactly two <suggestion></suggestion> blocks: first the "
            "suggestion for this step, then the requirement for the previous step."
        )
        retry = ChatRequest(
            messages=request.messages + [Message("assistant", reply), Message("user", note)],
            purpose=request.purpose,
            temperature=request.temperature,
            max_tokens=request.max_tokens,
            model_id=request.model_id,
        )
        reply = backend.complete(retry).text
        try:
            return parse_gradient_response(
                reply, level, node_name=record.node_name, node_output=record.node_output
            )
        except GradientParseError as err2:
            raise GradientParseFailure(record.node_name) from err2


def backpropagate(
    trajectory: Trajectory,
    loss: LanguageLoss,
    config: AgentConfig,
    backend: Backend,
    level: GradientLevel = GradientLevel.PROMPT,
    *,
    max_tokens: int = 1024,
    model_id: str = "",
) -> list[LanguageGradient]:
    """Generate one gradient per node, last node first, chaining requirements.

    The loss suggestion seeds the last node's incoming requirement; every
    earlier node receives the requirement its successor produced.  Gradients
    are also attached to the trajectory's records.
    """
    if trajectory.loss is None:
        raise ValueError("trajectory has no loss attached")
    gradients: list[LanguageGradient] = []
    requirement = loss.suggestion
    for record in reversed(trajectory.records):
        if level is GradientLevel.PROMPT:
            request = build_prompt_level_request(
                record, requirement, loss, max_tokens=max_tokens, model_id=model_id
            )
        else:
            node = config.pipeline.node(record.node_name)
            request = build_node_level_request(
                node, requirement, loss, max_tokens=max_tokens, model_id=model_id
            )
        gradient = _complete_with_reask(backend, request, level, record)
        if level is GradientLevel.PROMPT:
            record.gradient = gradient
        else:
            record.node_gradient = gradient
        gradients.append(gradient)
        requirement = gradient.requirement_for_previous
    return gradients
