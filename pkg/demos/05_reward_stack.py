#!/usr/bin/env python3
"""Score a rollout group with the full reward stack.

Four completions of varying quality get format / answer / grounding /
depth components, a weighted total, and group-normalized advantages. A
second iteration shows the progressive answer term rewarding improvement
over the previous group's mean judge score.
"""

import numpy as np

from sifkit import (
    BoxSet,
    DepthMap,
    GroundTruthBundle,
    MockJudge,
    RewardEngine,
)

gt = GroundTruthBundle(
    question="What color is the mug on the table?",
    answer="dark red",
    boxes=BoxSet.from_coords([(0.55, 0.4, 0.8, 0.7)]),
    depth=DepthMap(width=8, height=8, values=np.full((8, 8), 0.4)),
)

perfect = (
    '<think><area>[{"bbox":[0.0,0.0,1.0,1.0],"depth":0.4}]</area>'
    "<text>scanning the scene</text>"
    '<area>[{"bbox":[0.1,0.1,0.3,0.3],"depth":0.4}]</area>'
    "<text>not here; moving right</text>"
    '<area>[{"bbox":[0.55,0.4,0.8,0.7],"depth":0.4}]</area>'
    "<text>the mug, on the table</text></think><answer>dark red</answer>"
)
no_correction = (
    '<think><area>[{"bbox":[0.55,0.4,0.8,0.7],"depth":0.4}]</area>'
    "<text>straight to the mug</text></think><answer>dark red</answer>"
)
wrong_depth = perfect.replace('"depth":0.4}]</area><text>the mug', '"depth":0.9}]</area><text>the mug')
malformed = "The mug is dark red."

engine = RewardEngine(MockJudge())
completions = [perfect, no_correction, wrong_depth, malformed]
names = ["perfect w/ correction", "no correction arc", "wrong depth", "malformed"]

print("=== Iteration 1 ===")
breakdowns, group = engine.score_group("demo-sample", 1, completions, gt)
for name, b, adv in zip(names, breakdowns, group.advantages):
    print(
        f"{name:22s} fmt={b.r_format:.0f} ans={b.r_ans:.2f} bbox={b.r_bbox:+.2f} "
        f"depth={b.r_depth:.0f} total={b.total:.2f} advantage={adv:+.3f}"
    )

print(
    "\nThe correction arc pays: starting wrong and ending exact earns the"
    "\nfull +1 improvement bonus on top of the final grounding score."
)

print("\n=== Iteration 2: progressive answer term ===")
breakdowns, group = engine.score_group("demo-sample", 2, completions, gt)
for name, b in zip(names, breakdowns):
    print(f"{name:22s} judge={b.judge_score:.2f} ans-with-progress={b.r_ans:+.2f}")
print(
    "\nAnswers matching the judge's earlier group mean gain credit;"
    "\nregressions would be penalized below their raw judge score."
)
