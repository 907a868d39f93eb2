#!/usr/bin/env python3
"""Generate a ready-to-run toy task: agent config, dataset, and a scripted
backend file, so the CLI can be exercised without any live endpoint.

Usage:
    python3 scripts/make_toy_task.py [dir]       # default: toy/
    symgrad train --config toy/agent.cfg --data toy/train.jsonl \\
        --batch-size 3 --backend script:toy/script.json --out runs/toy
    symgrad replay --run runs/toy
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
    save_config,
)


def toy_config() -> AgentConfig:
    solve = NodeSpec(
        name="solve",
        description="Work out the answer.",
        begin_role="solver",
        roles={
            "solver": PromptTemplate(
                task_description="Answer the question: {input}",
                principles="Think before answering; keep it short.",
            )
        },
    )
    condense = NodeSpec(
        name="condense",
        description="Reduce the answer to its bare form.",
        begin_role="editor",
        roles={
            "editor": PromptTemplate(
                task_description="Condense this answer into the bare fact: {input}"
            )
        },
    )
    return AgentConfig(
        pipeline=PipelineSpec(nodes=[solve, condense]),
        global_task_description="Answer trivia questions with the bare fact only.",
    )


TOY_EXAMPLES = [
    {"id": "q1", "input": "Which women's lifestyle magazine is it?", "ground_truth": "BUST"},
    {"id": "q2", "input": "What is the capital of France?", "ground_truth": "Paris"},
    {"id": "q3", "input": "How many legs does a spider have?", "ground_truth": "8"},
]

TOY_SCRIPT = {
    "mode": "match_any",
    "entries": [
        {"purpose": "agent_forward", "substring": "Answer the question",
         "response": "I believe the answer is: the thing you asked about."},
        {"purpose": "agent_forward", "substring": "Condense this answer",
         "response": "the thing you asked about"},
        # After the optimizer rewrites the condense prompt, the rollback
        # re-run renders the new wording; give it a crisper answer.
        {"purpose": "agent_forward", "substring": "State only the bare fact",
         "response": "BUST"},
        {"purpose": "loss",
         "response": "<score>4</score><suggestion>The answer is vague; name the "
                     "specific fact instead of restating the question.</suggestion>"},
        {"purpose": "gradient_prompt",
         "response": "<suggestion>Tell the role to commit to one concrete answer."
                     "</suggestion><suggestion>Pass along a single concrete candidate "
                     "answer, not a restatement.</suggestion>"},
        # The condense step's task_description gets one concrete rewrite; every
        # other component declines.
        {"purpose": "optimizer_prompt",
         "substring": "The current prompt template is: Condense this answer into the bare fact: {input}",
         "response": "<analyse>The condense prompt tolerates hedging.</analyse>"
                     "<new_prompt>State only the bare fact contained in: {input}</new_prompt>"},
        {"purpose": "optimizer_prompt",
         "response": "<analyse>good enough</analyse><new_prompt></new_prompt>"},
    ],
}


def main() -> int:
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("toy")
    out.mkdir(parents=True, exist_ok=True)
    save_config(toy_config(), str(out / "agent.cfg"))
    with (out / "train.jsonl").open("w", encoding="utf-8") as fh:
        for record in TOY_EXAMPLES:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
    (out / "script.json").write_text(
        json.dumps(TOY_SCRIPT, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )
    print(f"wrote {out}/agent.cfg, {out}/train.jsonl, {out}/script.json")
    print("try:")
    print(f"  symgrad train --config {out}/agent.cfg --data {out}/train.jsonl "
          f"--batch-size 3 --backend script:{out}/script.json --out runs/toy")
    print("  symgrad replay --run runs/toy")
    return 0


if __name__ == "__main__":
    sys.exit(main())
