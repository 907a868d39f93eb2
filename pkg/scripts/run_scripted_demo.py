#!/usr/bin/env python3
"""End-to-end demo on a fully scripted backend: one training step that
accepts a prompt rewrite, survives the rollback check, and leaves a
replayable run directory.

Usage: python3 scripts/run_scripted_demo.py [out_dir]
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

from symgrad import (
    AgentConfig,
    NodeSpec,
    PipelineSpec,
    PromptTemplate,
    Purpose,
    ScriptedBackend,
    ScriptEntry,
    ScriptMode,
)
from symgrad.datasets import Example
from symgrad.training import TrainConfig, replay_run, train


def demo_config() -> AgentConfig:
    draft = NodeSpec(
        name="draft",
        description="Write a first answer.",
        begin_role="writer",
        roles={"writer": PromptTemplate(task_description="Draft an answer to: {input}")},
    )
    polish = NodeSpec(
        name="polish",
        description="Tighten the draft.",
        begin_role="editor",
        roles={"editor": PromptTemplate(task_description="Polish this draft: {input}")},
    )
    return AgentConfig(
        pipeline=PipelineSpec(nodes=[draft, polish]),
        global_task_description="Answer trivia questions concisely.",
    )


def demo_backend() -> ScriptedBackend:
    entries = [
        ScriptEntry(response="The answer is BUST magazine.", purpose=Purpose.AGENT_FORWARD,
                    substring="Draft an answer"),
        ScriptEntry(response="BUST magazine.", purpose=Purpose.AGENT_FORWARD,
                    substring="Polish this draft"),
        ScriptEntry(
            response="<score>6</score><suggestion>Drop the trailing period and filler.</suggestion>",
            purpose=Purpose.LOSS,
        ),
        ScriptEntry(
            response=(
                "<suggestion>Ask the editor to emit the bare answer.</suggestion>"
                "<suggestion>Keep the draft to one sentence.</suggestion>"
            ),
            purpose=Purpose.GRADIENT_PROMPT,
        ),
        ScriptEntry(
            response=(
                "<analyse>The polish prompt tolerates filler words.</analyse>"
                "<new_prompt>Polish this draft into the bare answer: {input}</new_prompt>"
            ),
            purpose=Purpose.OPTIMIZER_PROMPT,
            substring="Polish this draft: {input}",
        ),
        ScriptEntry(response="<analyse>fine</analyse><new_prompt></new_prompt>",
                    purpose=Purpose.OPTIMIZER_PROMPT),
    ]
    return ScriptedBackend(entries, ScriptMode.MATCH_ANY)


def main() -> int:
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("runs/demo")
    backend = demo_backend()
    examples = [Example(id="q1", input="Which magazine is it?", ground_truth="BUST")]

    final, checkpoints = train(
        demo_config(), examples, TrainConfig(batch_size=1, seed=0), backend, run_dir=out
    )

    print(f"run directory: {out}")
    print(f"llm calls: {len(backend.transcript)}")
    print(f"checkpoints: {[c.version for c in checkpoints]}")
    print(f"final version: {final.version}")
    print("polish prompt now:",
          json.dumps(final.pipeline.node('polish').roles['editor'].task_description))

    reconstructed = replay_run(out)
    print("replay matches final:", reconstructed == final)
    return 0


if __name__ == "__main__":
    sys.exit(main())
