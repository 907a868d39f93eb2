"""Judge evaluation of a trajectory: builds the loss prompt, parses the reply.

Three modes: supervised (ground truth available), score-informed (ground
truth plus an externally computed metric value), and unsupervised (judge
evaluates against the task description alone).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum

from .errors import (
    LossParseError,
    MissingScoreTag,
    MissingSuggestionTag,
    NonIntegerScore,
    ScoreOutOfRange,
)
from .forward import Trajectory
from .gateway import Backend, ChatRequest, Message, Purpose

SCORE_MIN, SCORE_MAX = 0, 10

# Sentinel suggestion the judge uses when the output needs no change.
SATISFACTORY_SENTINEL = "The output is satisfactory, no additional requirements"


class LossMode(str, Enum):
    SUPERVISED = "supervised"
    UNSUPERVISED = "unsupervised"
    SCORE_INFORMED = "score_informed"


@dataclass
class LanguageLoss:
    suggestion: str
    raw_response: str
    mode: LossMode
    score: int | None = None


SUPERVISED_TEMPLATE = """You are a fine-tuner of a large model. I will provide you with some output results from the model and the expected correct results. You need to evaluate these data and provide a score out of 10, please wrap the score using <score></score>. Additionally, please provide some suggestions for modifying the model's output, using <suggestion></suggestion> to wrap your suggestions.

Here is the model's output:
<result>{result}</result>

The expected result is:
<ground_truth>{ground_truth}</ground_truth>

Please note:

1. Ensure that the output is wrapped with <score></score> and <suggestion></suggestion> respectively.
2. The output should be as consistent as possible with the expected result while being correct. For example, if the expected result is "BUST", and the model's output is "The women's lifestyle magazine is 'BUST' magazine.", even though the answer is correct, you should advise the model to be more concise.
3. The standard for a score of 10 is that the model's output is exactly the same as the expected result in a case-insensitive manner, and without any unnecessary content. Even if the model's output is semantically correct, if it includes superfluous content, points should be deducted."""

SCORE_INFORMED_TEMPLATE = """You are a large language model fine-tuner. I will provide you with a model's output and the expected correct result. You need to evaluate it and suggest modifications to the model's output. Please use `<suggestion></suggestion>` to enclose your feedback.

Below is the model's output:
<result>{result}</result>

The expected result is:
<ground_truth>{ground_truth}</ground_truth>

Here is the evaluation score for the model. Your goal is to optimize this score:
<score>{score}</score>

The relevant information about this score is as follows:
<evaluation_info>{score_info}</evaluation_info>

Note:
1. Ensure that `<suggestion></suggestion>` exists and appears once.
2. If the model's output is satisfactory, you can output <suggestion>The output is satisfactory, no additional requirements</suggestion>.
3. The output should be as close to the expected result as possible while ensuring correctness. For example, if the expected result is "BUST" and the model's output is "The women's lifestyle magazine is 'BUST' magazine.", even though this answer is correct, you should remind the model to be concise."""

UNSUPERVISED_TEMPLATE = """You are a fine-tuner of a large model. I will provide you with the output the model produced for a task. There is no reference answer; evaluate the output against the task description and the trajectory given below. You may provide a score out of 10 wrapped in <score></score>. Additionally, please provide some suggestions for modifying the model's output, using <suggestion></suggestion> to wrap your suggestions.

Here is the model's output:
<result>{result}</result>

Please note:
1. Ensure that the output contains <suggestion></suggestion>.
2. If the model's output is satisfactory, you can output <suggestion>The output is satisfactory, no additional requirements</suggestion>.
3. Judge the output strictly by how well it accomplishes the task described below."""

TRUNCATE_CHARS = 2000


def fill_slots(template: str, **slots: str) -> str:
    # Plain replacement keeps braces inside slot values inert.
    for name, value in slots.items():
        template = template.replace("{" + name + "}", value)
    return template


def _clip(text: str, limit: int = TRUNCATE_CHARS) -> str:
    return text if len(text) <= limit else text[:limit] + "…[truncated]"


def trajectory_digest(trajectory: Trajectory, limit: int = TRUNCATE_CHARS) -> str:
    """Per-node summary of the forward pass, inputs/outputs clipped."""
    sections = []
    for record in trajectory.records:
        sections.append(
            f"## Node: {record.node_name}\n"
            f"Input: {_clip(record.node_input, limit)}\n"
            f"Output: {_clip(record.node_output, limit)}"
        )
    return "\n\n".join(sections)


def resolve_mode(ground_truth: str | None, external_score) -> LossMode:
    if ground_truth is not None and external_score is not None:
        return LossMode.SCORE_INFORMED
    if ground_truth is not None:
        return LossMode.SUPERVISED
    if external_score is not None:
        raise ValueError("an external score without ground truth has no loss mode")
    return LossMode.UNSUPERVISED


def build_loss_request(
    trajectory: Trajectory,
    ground_truth: str | None = None,
    external_score: tuple[float, str] | None = None,
    *,
    max_tokens: int = 1024,
    model_id: str = "",
) -> ChatRequest:
    """Assemble the judge request for exactly one applicable mode."""
    mode = resolve_mode(ground_truth, external_score)
    if mode is LossMode.SUPERVISED:
        body = fill_slots(
            SUPERVISED_TEMPLATE,
            result=trajectory.final_output,
            ground_truth=ground_truth or "",
        )
    elif mode is LossMode.SCORE_INFORMED:
        score, score_info = external_score  # type: ignore[misc]
        body = fill_slots(
            SCORE_INFORMED_TEMPLATE,
            result=trajectory.final_output,
            ground_truth=ground_truth or "",
            score=format(score, "g") if isinstance(score, float) else str(score),
            score_info=score_info,
        )
    else:
        body = fill_slots(UNSUPERVISED_TEMPLATE, result=trajectory.final_output)

    content = (
        f"{body}\n\n"
        f"Task description:\n{trajectory.task_description}\n\n"
        f"Input:\n{trajectory.agent_input}\n\n"
        f"Trajectory:\n{trajectory_digest(trajectory)}"
    )
    return ChatRequest(
        messages=[Message("user", content)],
        purpose=Purpose.LOSS,
        temperature=0.0,
        max_tokens=max_tokens,
        model_id=model_id,
    )


def extract_tag(text: str, tag: str) -> str | None:
    """First-match, non-greedy extraction of a `<tag>...</tag>` block."""
    match = re.search(f"<{tag}>(.*?)</{tag}>", text, re.DOTALL)
    return match.group(1) if match else None


def _parse_score(text: str, required: bool) -> int | None:
    raw = extract_tag(text, "score")
    if raw is None:
        if required:
            raise MissingScoreTag("no <score> tag in judge reply")
        return None
    raw = raw.strip()
    try:
        score = int(raw)
    except ValueError:
        raise NonIntegerScore(f"score {raw!r} is not an integer") from None
    if not SCORE_MIN <= score <= SCORE_MAX:
        raise ScoreOutOfRange(f"score {score} outside [{SCORE_MIN}, {SCORE_MAX}]")
    return score


def parse_loss_response(text: str, mode: LossMode) -> LanguageLoss:
    """Parse a judge reply, or raise one of the enumerated parse errors."""
    score = _parse_score(text, required=mode is LossMode.SUPERVISED)
    suggestion = extract_tag(text, "suggestion")
    if suggestion is None or not suggestion.strip():
        raise MissingSuggestionTag("no usable <suggestion> tag in judge reply")
    return LanguageLoss(
        suggestion=suggestion.strip(),
        raw_response=text,
        mode=mode,
        score=score,
    )


def compute_loss(
    trajectory: Trajectory,
    backend: Backend,
    *,
    ground_truth: str | None = None,
    external_score: tuple[float, str] | None = None,
    max_tokens: int = 1024,
    model_id: str = "",
) -> LanguageLoss:
    """Build, send, and parse the loss request, with one corrective re-ask."""
    mode = resolve_mode(ground_truth, external_score)
    request = build_loss_request(
        trajectory,
        ground_truth,
        external_score,
        max_tokens=max_tokens,
        model_id=model_id,
    )
    reply = backend.complete(request).text
    try:
        return parse_loss_response(reply, mode)
    except LossParseError as err:
        note = (
            f"Your previous reply could not be parsed ({type(err).__name__}: {err}). "
            "Answer again. Wrap an integer score from 0 to 10 in <score></score> "
            "and your suggestion in <suggestion></suggestion>."
        )
        retry = ChatRequest(
            messages=request.messages + [Message("assistant", reply), Message("user", note)],
            purpose=Purpose.LOSS,
            temperature=0.0,
            max_tokens=max_tokens,
            model_id=model_id,
        )
        reply = backend.complete(retry).text
        return parse_loss_response(reply, mode)
