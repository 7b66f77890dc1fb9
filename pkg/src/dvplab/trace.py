"""Line-oriented trace files.

A trace is the full action log of one run: a version header, the scenario
that built the world, one line per recorded action (including informational
``note`` records the engine emits alongside executions), and the terminal
world fingerprint.  Replaying the actions through a freshly built world
must reproduce that fingerprint bit-exactly.
"""

from __future__ import annotations

import json
from typing import List, Tuple

from .errors import TraceError

TRACE_VERSION = 1
_HEADER_TAG = "dvplab-trace"


def _line(tag: str, payload: dict) -> str:
    return tag + " " + json.dumps(payload, sort_keys=True, separators=(",", ":"))


def dump_trace(scenario_dict: dict, actions: List[dict], fingerprint: str) -> str:
    lines = [
        _line(_HEADER_TAG, {"version": TRACE_VERSION}),
        _line("scenario", scenario_dict),
    ]
    for action in actions:
        lines.append(_line("action", action))
    lines.append(_line("fingerprint", {"value": fingerprint}))
    return "\n".join(lines) + "\n"


def write_trace(path: str, scenario_dict: dict, actions: List[dict], fingerprint: str) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(dump_trace(scenario_dict, actions, fingerprint))


def parse_trace(text: str) -> Tuple[dict, List[dict], str]:
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines:
        raise TraceError("empty trace")

    def decode(index: int, expected_tag: str) -> dict:
        if index >= len(lines):
            raise TraceError(f"truncated trace: missing {expected_tag} line")
        tag, _, payload = lines[index].partition(" ")
        if tag != expected_tag:
            raise TraceError(f"line {index + 1}: expected {expected_tag!r}, got {tag!r}")
        try:
            return json.loads(payload)
        except json.JSONDecodeError as exc:
            raise TraceError(f"line {index + 1}: bad JSON: {exc}") from exc

    header = decode(0, _HEADER_TAG)
    if header.get("version") != TRACE_VERSION:
        raise TraceError(f"unsupported trace version {header.get('version')!r}")
    scenario_dict = decode(1, "scenario")
    if len(lines) < 3:
        raise TraceError("truncated trace: missing fingerprint line")
    actions = []
    for index in range(2, len(lines) - 1):
        actions.append(decode(index, "action"))
    footer = decode(len(lines) - 1, "fingerprint")
    if "value" not in footer:
        raise TraceError("fingerprint line lacks a value")
    return scenario_dict, actions, footer["value"]


def read_trace(path: str) -> Tuple[dict, List[dict], str]:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            text = handle.read()
    except OSError as exc:
        raise TraceError(f"cannot read trace: {exc}") from exc
    return parse_trace(text)
