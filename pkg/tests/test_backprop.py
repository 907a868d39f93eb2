from __future__ import annotations

import json

import pytest

from symgrad import (
    Controller,
    GradientLevel,
    LanguageLoss,
    LossMode,
    Purpose,
    RouteType,
    backpropagate,
    run_pipeline,
)
from symgrad.backprop import (
    FIRST_NODE_SENTINEL,
    build_node_level_request,
    build_prompt_level_request,
    parse_gradient_response,
)
from symgrad.config_io import node_from_dict
from symgrad.errors import AmbiguousBlocks, GradientParseFailure, MissingBlock
from symgrad.forward import NodeRecord, ToolRecord

from conftest import (
    grad_reply,
    loss_reply,
    make_chain_config,
    make_config,
    make_node,
    make_template,
    match_any,
    rule,
    strict,
)


def make_loss(score=6, suggestion="tighten the answer"):
    return LanguageLoss(
        suggestion=suggestion,
        raw_response=loss_reply(score, suggestion),
        mode=LossMode.SUPERVISED,
        score=score,
    )


def make_record(snapshot=None, node_input="a", node_output="b", name="solve"):
    return NodeRecord(
        node_name=name,
        node_input=node_input,
        node_output=node_output,
        prompt_snapshot=snapshot or {"solver": "P"},
    )


class TestBuildPromptLevelRequest:
    def test_all_four_slots_wrapped(self):
        request = build_prompt_level_request(make_record(), "be shorter", make_loss())
        text = request.text()
        assert "<prompt_template>P</prompt_template>" in text
        assert "<previous_output>a</previous_output>" in text
        assert "<output>b</output>" in text
        assert "<requirement>be shorter</requirement>" in text
        assert request.purpose is Purpose.GRADIENT_PROMPT

    def test_score_header(self):
        request = build_prompt_level_request(make_record(), "req", make_loss(score=6))
        assert request.text().startswith("Overall score: 6/10")

    def test_no_header_without_score(self):
        loss = LanguageLoss(suggestion="s", raw_response="", mode=LossMode.UNSUPERVISED)
        request = build_prompt_level_request(make_record(), "req", loss)
        assert "Overall score" not in request.text()

    def test_empty_node_input_still_fills_slot(self):
        request = build_prompt_level_request(
            make_record(node_input=""), "req", make_loss()
        )
        assert "<previous_output></previous_output>" in request.text()

    def test_multi_role_snapshot_sections_in_order(self):
        record = make_record(snapshot={"draft": "D", "review": "R"})
        text = build_prompt_level_request(record, "req", make_loss()).text()
        expected = "<prompt_template>### Role: draft\nD\n\n### Role: review\nR</prompt_template>"
        assert expected in text

    def test_tool_usage_appended(self):
        record = make_record()
        record.tool_calls.append(ToolRecord("search", "q=x", result="hit"))
        text = build_prompt_level_request(record, "req", make_loss()).text()
        assert "Tool usage in this step:" in text
        assert "- search(q=x) -> hit" in text


class TestBuildNodeLevelRequest:
    def test_template_constancy_for_single_role(self):
        node = make_node()
        text = build_node_level_request(node, "req", make_loss()).text()
        assert '"route_type" indicates the scheduling method' in text
        assert text.count("<suggestion></suggestion>") >= 1

    def test_llm_controller_serialized(self):
        node = make_node(
            roles={"a": make_template(), "b": make_template()},
            controller=Controller(
                route_type=RouteType.LLM,
                route_system_prompt="pick wisely",
                route_last_prompt="who next?",
            ),
        )
        text = build_node_level_request(node, "req", make_loss()).text()
        assert "pick wisely" in text
        assert build_node_level_request(node, "req", make_loss()).purpose is Purpose.GRADIENT_NODE

    def test_embedded_config_round_trips(self):
        # Embed/extract oracle: the JSON inside the request parses back to the node.
        node = make_node(roles={"a": make_template(), "b": make_template(task="Check {input}")})
        text = build_node_level_request(node, "req", make_loss()).text()
        start = text.index("## Current Node Config\n") + len("## Current Node Config\n")
        end = text.index("\n\n- The requirement proposed")
        assert node_from_dict(json.loads(text[start:end])) == node

    def test_requirement_embedded(self):
        node = make_node()
        text = build_node_level_request(node, "make it shorter", make_loss()).text()
        assert "<requirement>make it shorter</requirement>" in text


class TestParseGradientResponse:
    def test_positional_mapping(self):
        gradient = parse_gradient_response(
            grad_reply("tune the prompt", "give cleaner input"),
            GradientLevel.PROMPT,
            node_name="n",
            node_output="o",
        )
        assert gradient.suggestion_for_node == "tune the prompt"
        assert gradient.requirement_for_previous == "give cleaner input"
        assert gradient.level is GradientLevel.PROMPT
        assert gradient.node_name == "n"
        assert gradient.node_output == "o"

    def test_one_block_missing_requirement(self):
        with pytest.raises(MissingBlock) as err:
            parse_gradient_response("<suggestion>only one</suggestion>", GradientLevel.PROMPT)
        assert err.value.kind == "requirement_for_previous"

    def test_zero_blocks(self):
        with pytest.raises(MissingBlock) as err:
            parse_gradient_response("nothing here", GradientLevel.PROMPT)
        assert err.value.kind == "suggestion_for_node"

    def test_unclosed_tag_ambiguous(self):
        with pytest.raises(AmbiguousBlocks):
            parse_gradient_response(
                "<suggestion>one</suggestion><suggestion>unclosed", GradientLevel.PROMPT
            )

    def test_analysis_captured_at_node_level(self):
        text = "<analyse>A</analyse>" + grad_reply()
        gradient = parse_gradient_response(text, GradientLevel.NODE)
        assert gradient.analysis == "A"

    def test_analysis_optional(self):
        gradient = parse_gradient_response(grad_reply(), GradientLevel.NODE)
        assert gradient.analysis is None

    def test_first_node_sentinel_accepted(self):
        gradient = parse_gradient_response(
            grad_reply("adjust", FIRST_NODE_SENTINEL), GradientLevel.PROMPT
        )
        assert gradient.requirement_for_previous == FIRST_NODE_SENTINEL

    def test_extra_blocks_ignored(self):
        text = grad_reply("a", "b") + "<suggestion>c</suggestion>"
        gradient = parse_gradient_response(text, GradientLevel.PROMPT)
        assert gradient.suggestion_for_node == "a"
        assert gradient.requirement_for_previous == "b"


def _run_and_attach_loss(config, backend, agent_input="q"):
    trajectory = run_pipeline(config, agent_input, backend)
    trajectory.loss = make_loss()
    return trajectory


class TestBackpropagate:
    def test_single_node_request_contains_loss_suggestion(self, one_node_config):
        backend = match_any(
            rule("R", purpose=Purpose.AGENT_FORWARD),
            rule(grad_reply(), purpose=Purpose.GRADIENT_PROMPT),
        )
        trajectory = _run_and_attach_loss(one_node_config, backend)
        gradients = backpropagate(trajectory, trajectory.loss, one_node_config, backend)
        assert len(gradients) == 1
        gradient_request = backend.calls_with(Purpose.GRADIENT_PROMPT)[0][0]
        assert "<requirement>tighten the answer</requirement>" in gradient_request.text()

    def test_three_node_reverse_chaining(self):
        config = make_chain_config(names=("plan", "write", "revise"))
        backend = match_any(
            rule("PLAN-OUT", purpose=Purpose.AGENT_FORWARD, substring="plan step"),
            rule("WRITE-OUT", purpose=Purpose.AGENT_FORWARD, substring="write step"),
            rule("REVISE-OUT", purpose=Purpose.AGENT_FORWARD, substring="revise step"),
            rule(
                grad_reply("tighten revise", "REQ-FOR-WRITE"),
                purpose=Purpose.GRADIENT_PROMPT,
                substring="REVISE-OUT",
            ),
            rule(
                grad_reply("tighten write", "REQ-FOR-PLAN"),
                purpose=Purpose.GRADIENT_PROMPT,
                substring="WRITE-OUT",
            ),
            rule(
                grad_reply("tighten plan", FIRST_NODE_SENTINEL),
                purpose=Purpose.GRADIENT_PROMPT,
                substring="PLAN-OUT",
            ),
        )
        # Give each role prompt a node marker so forward rules can key on it.
        for node in config.pipeline.nodes:
            node.roles["worker"].task_description = f"{node.name} step: {{input}}"
        trajectory = _run_and_attach_loss(config, backend)
        gradients = backpropagate(trajectory, trajectory.loss, config, backend)

        assert [g.node_name for g in gradients] == ["revise", "write", "plan"]
        # Transcript-inspection oracle: each upstream request embeds the
        # downstream gradient's requirement verbatim.
        gradient_requests = backend.calls_with(Purpose.GRADIENT_PROMPT)
        write_request = gradient_requests[1][0].text()
        plan_request = gradient_requests[2][0].text()
        assert "<requirement>REQ-FOR-WRITE</requirement>" in write_request
        assert "<requirement>REQ-FOR-PLAN</requirement>" in plan_request
        assert gradients[2].requirement_for_previous == FIRST_NODE_SENTINEL

    def test_gradients_attached_to_records(self, three_node_config):
        backend = match_any(
            rule("out", purpose=Purpose.AGENT_FORWARD),
            rule(grad_reply(), purpose=Purpose.GRADIENT_PROMPT),
        )
        trajectory = _run_and_attach_loss(three_node_config, backend)
        gradients = backpropagate(trajectory, trajectory.loss, three_node_config, backend)
        assert len(gradients) == len(trajectory.records)
        for record in trajectory.records:
            assert record.gradient is not None
            assert record.node_gradient is None

    def test_node_level_fills_node_gradient(self, one_node_config):
        backend = match_any(
            rule("out", purpose=Purpose.AGENT_FORWARD),
            rule("<analyse>A</analyse>" + grad_reply(), purpose=Purpose.GRADIENT_NODE),
        )
        trajectory = _run_and_attach_loss(one_node_config, backend)
        gradients = backpropagate(
            trajectory, trajectory.loss, one_node_config, backend, GradientLevel.NODE
        )
        assert gradients[0].level is GradientLevel.NODE
        assert trajectory.records[0].node_gradient is gradients[0]
        assert trajectory.records[0].gradient is None

    def test_requires_attached_loss(self, one_node_config):
        backend = match_any(rule("out", purpose=Purpose.AGENT_FORWARD))
        trajectory = run_pipeline(one_node_config, "q", backend)
        with pytest.raises(ValueError):
            backpropagate(trajectory, make_loss(), one_node_config, backend)

    def test_reask_recovers(self, one_node_config):
        backend = strict(
            rule("out", purpose=Purpose.AGENT_FORWARD),
            rule("no blocks", purpose=Purpose.GRADIENT_PROMPT),
            rule(grad_reply(), purpose=Purpose.GRADIENT_PROMPT),
        )
        trajectory = _run_and_attach_loss(one_node_config, backend)
        gradients = backpropagate(trajectory, trajectory.loss, one_node_config, backend)
        assert len(gradients) == 1
        assert len(backend.calls_with(Purpose.GRADIENT_PROMPT)) == 2

    def test_two_failures_abort(self, one_node_config):
        backend = strict(
            rule("out", purpose=Purpose.AGENT_FORWARD),
            rule("junk", purpose=Purpose.GRADIENT_PROMPT),
            rule("junk again", purpose=Purpose.GRADIENT_PROMPT),
        )
        trajectory = _run_and_attach_loss(one_node_config, backend)
        with pytest.raises(GradientParseFailure) as err:
            backpropagate(trajectory, trajectory.loss, one_node_config, backend)
        assert err.value.node == "solve"

    def test_forward_fields_untouched(self, three_node_config):
        backend = match_any(
            rule("out", purpose=Purpose.AGENT_FORWARD),
            rule(grad_reply(), purpose=Purpose.GRADIENT_PROMPT),
        )
        trajectory = _run_and_attach_loss(three_node_config, backend)
        outputs_before = [r.node_output for r in trajectory.records]
        inputs_before = [r.node_input for r in trajectory.records]
        backpropagate(trajectory, trajectory.loss, three_node_config, backend)
        assert [r.node_output for r in trajectory.records] == outputs_before
        assert [r.node_input for r in trajectory.records] == inputs_before
