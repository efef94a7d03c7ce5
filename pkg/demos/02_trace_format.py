#!/usr/bin/env python3
"""The interleaved trace grammar: parsing, diagnostics, canonical form.

A trace narrates a scan of the image as alternating region/text pairs and
ends with an answer; the format reward is all-or-nothing, so the parser
doubles as the reward's gatekeeper and must explain every rejection.
"""

from sifkit import format_reward, parse_trace, serialize_trace
from sifkit.trace import TraceParseError

GOOD = (
    "<think>"
    '<area>[{"bbox":[0.0,0.0,1.0,1.0],"depth":0.62}]</area>'
    "<text>Scanning the whole scene; the question mentions a mug on a table.</text>"
    '<area>[{"bbox":[0.55,0.4,0.8,0.7],"depth":0.31}]</area>'
    "<text>The table is here; the mug sits near its left edge.</text>"
    "</think>"
    "<answer>dark red</answer>"
)

print("=== A valid two-step trace ===")
trace = parse_trace(GOOD)
print(f"steps           : {len(trace.steps)}")
print(f"final answer    : {trace.answer!r}")
print(f"format reward   : {format_reward(GOOD)}")

print("\n=== Canonical serialization (3-decimal, byte-stable) ===")
print(serialize_trace(trace))

print("\n=== Every failure mode carries a byte offset ===")
BROKEN = [
    "<think><text>narration first</text></think><answer>x</answer>",
    '<think><area>[{"bbox":[0.3,0.3,0.2,0.9],"depth":0.4}]</area><text>t</text></think><answer>x</answer>',
    '<think><area>[{"bbox":[0,0,1,1],"depth":1.3}]</area><text>t</text></think><answer>x</answer>',
    GOOD + "trailing garbage",
    "<think><area>[{oops]</area><text>t</text></think><answer>x</answer>",
]
for raw in BROKEN:
    try:
        parse_trace(raw)
    except TraceParseError as err:
        print(f"{err.code.value:18s} @ byte {err.byte_offset:5d}  {err.message}")
    print(f"  -> format reward {format_reward(raw)}")
