"""Line-based ``key = value`` scenario files.

Blank lines and ``#`` comments are ignored. Keys map one-to-one onto
:class:`~trackbridge.mocks.ScenarioSpec` fields; ``fault`` may repeat and
takes ``kind@start`` or ``kind@start+duration``::

    shape = STRAIGHT
    speed = 5
    initial_offset = 1.0
    fault = actuator@10
    fault = loc_outage@12+0.5
"""

from __future__ import annotations

import dataclasses
import math
from pathlib import Path
from typing import Union

from ..mocks import FAULT_KINDS, Fault, ScenarioSpec, Shape

_FIELDS = {f.name: f for f in dataclasses.fields(ScenarioSpec)}
_OPTIONAL_FLOATS = {"start_speed", "length", "stop_time", "initial_speed"}
_INTS = {"mode_hint", "seed"}
_BOOLS = {"expect_handover"}
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


class ScenarioParseError(ValueError):
    def __init__(self, line: int, message: str, source: str = "<scenario>"):
        self.line = line
        self.source = source
        super().__init__(f"{source}:{line}: {message}")


def _float(text: str) -> float:
    v = float(text)
    if math.isnan(v):
        raise ValueError("NaN is not allowed")
    return v


def _fault(text: str) -> Fault:
    kind, sep, when = text.partition("@")
    kind = kind.strip()
    if not sep:
        raise ValueError("fault must look like kind@start[+duration]")
    if kind not in FAULT_KINDS:
        raise ValueError(f"unknown fault kind {kind!r}; expected one of {', '.join(FAULT_KINDS)}")
    start, plus, dur = when.partition("+")
    return Fault(kind, _float(start), _float(dur) if plus else math.inf)


def parse_scenario(text: str, source: str = "<scenario>") -> ScenarioSpec:
    values: dict = {}
    faults: list[Fault] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ScenarioParseError(lineno, f"expected 'key = value', got {raw.strip()!r}", source)
        try:
            if key == "fault":
                faults.append(_fault(value))
                continue
            if key not in _FIELDS:
                raise ValueError(f"unknown key {key!r}")
            if key in values:
                raise ValueError(f"duplicate key {key!r}")
            if key == "shape":
                values[key] = Shape(value.upper())
            elif key == "name":
                values[key] = value
            elif key in _BOOLS:
                low = value.lower()
                if low not in _TRUE | _FALSE:
                    raise ValueError(f"expected a boolean, got {value!r}")
                values[key] = low in _TRUE
            elif key in _INTS:
                values[key] = int(value)
            elif key in _OPTIONAL_FLOATS and value.lower() == "none":
                values[key] = None
            else:
                values[key] = _float(value)
        except ValueError as exc:
            raise ScenarioParseError(lineno, str(exc), source) from None
    values["faults"] = tuple(faults)
    try:
        return ScenarioSpec(**values)
    except ValueError as exc:
        raise ScenarioParseError(0, str(exc), source) from None


def load_scenario(path: Union[str, Path]) -> ScenarioSpec:
    path = Path(path)
    spec = parse_scenario(path.read_text(), str(path))
    if spec.name == "scenario":
        spec = dataclasses.replace(spec, name=path.stem)
    return spec


def dump_scenario(spec: ScenarioSpec) -> str:
    lines = []
    for f in dataclasses.fields(spec):
        if f.name == "faults":
            continue
        v = getattr(spec, f.name)
        if isinstance(v, Shape):
            v = v.value
        lines.append(f"{f.name} = {v}")
    for fault in spec.faults:
        tail = "" if math.isinf(fault.duration) else f"+{fault.duration!r}"
        lines.append(f"fault = {fault.kind}@{fault.start!r}{tail}")
    return "\n".join(lines) + "\n"
