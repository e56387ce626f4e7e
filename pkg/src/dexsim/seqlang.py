"""Line-oriented pulse-sequence description format (.dexseq).

Example::

    # deterministic writing followed by a detuned control pulse
    format = 1
    rep_rate = 1 MHz
    t_end = 120 ns
    trajectories = 20000
    seed = 7

    pulse pump { t0 = 1 ns; duration = 60 ns; shape = square;
                 transition = VAC_DE; polarization = H; area = pi }
    pulse control {
        t0 = 62 ns
        duration = 17.3365 ps
        shape = sech
        transition = DE_XX
        polarization = sigma+
        area = 2pi
        detuning = 70 ueV
        bandwidth = 100 ueV
    }

Globals are ``key = value [unit]`` pairs: ``rep_rate`` (MHz) or
``rep_period``, ``t_end``, ``seed``, ``trajectories``, plus overrides of any
physical-constant field (tau_de, t2_star, ...).  Times accept ns/ps/us,
energies ueV; areas are ``pi``, ``2pi``, ``<x>pi`` or a number in radians.
Semicolons and newlines both separate statements inside a pulse block.
Every parse error names the offending line.  All quantities are normalized
to internal units (ns, ueV) in the returned document.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import NamedTuple

from .physics import (
    JONES_H,
    JONES_SIGMA_MINUS,
    JONES_SIGMA_PLUS,
    JONES_V,
    SystemParams,
    default_params,
)
from .pulses import Pulse, PulseSequence, PulseShape, Transition

FORMAT_VERSION = 1
FILE_EXTENSION = ".dexseq"

TIME_UNITS = {"ns": 1.0, "ps": 1e-3, "us": 1e3}

PARAM_TIME_KEYS = (
    "tau_de", "tau_be", "t_larmor_de", "tau_xx_ss", "tau_xx_sp",
    "tau_hh", "t_larmor_xx", "t2_star", "irf_fwhm",
)
PARAM_BARE_KEYS = ("efficiency",)
GLOBAL_INT_KEYS = ("format", "seed", "trajectories")
GLOBAL_TIME_KEYS = ("t_end", "rep_period")

PULSE_KEY_ORDER = (
    "t0", "duration", "shape", "transition", "polarization",
    "area", "power", "detuning", "bandwidth",
)
REQUIRED_PULSE_KEYS = ("t0", "duration", "shape", "transition", "polarization")

POLARIZATIONS = {
    "H": JONES_H, "V": JONES_V,
    "sigma+": JONES_SIGMA_PLUS, "sigma-": JONES_SIGMA_MINUS,
}

_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_\-]*$")
_BLOCK_RE = re.compile(r"^pulse\s+(\S+)\s*\{(.*)$")
_NUM_RE = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")
_PI_RE = re.compile(r"^([+-]?(\d+\.?\d*|\.\d+)?)pi$")


class ParseError(ValueError):
    def __init__(self, line: int, message: str):
        self.line = line
        self.message = message
        super().__init__(f"line {line}: {message}")


class SerializeError(ValueError):
    pass


@dataclass
class SeqDocument:
    """Normalized parse result: globals in ns/ueV, pulses as key->value maps."""

    format: int = FORMAT_VERSION
    globals: dict = field(default_factory=dict)
    pulses: list = field(default_factory=list)  # [(name, {key: value})]


class ParsedSequence(NamedTuple):
    document: SeqDocument
    sequence: PulseSequence
    params: SystemParams


def _parse_number(token: str, line: int) -> float:
    token = token.strip()
    if token == "inf":
        return math.inf
    if not _NUM_RE.match(token):
        raise ParseError(line, f"expected a number, got {token!r}")
    return float(token)


def _parse_time(value: str, line: int, key: str) -> float:
    parts = value.split()
    if len(parts) == 1:
        return _parse_number(parts[0], line)
    if len(parts) == 2:
        num = _parse_number(parts[0], line)
        if parts[1] not in TIME_UNITS:
            raise ParseError(line, f"{key}: expected a time unit (ns/ps/us), got {parts[1]!r}")
        return num * TIME_UNITS[parts[1]]
    raise ParseError(line, f"{key}: malformed value {value!r}")


def _parse_energy(value: str, line: int, key: str) -> float:
    parts = value.split()
    if len(parts) == 1:
        return _parse_number(parts[0], line)
    if len(parts) == 2:
        if parts[1] != "ueV":
            raise ParseError(line, f"{key}: expected energy unit ueV, got {parts[1]!r}")
        return _parse_number(parts[0], line)
    raise ParseError(line, f"{key}: malformed value {value!r}")


def _parse_bare(value: str, line: int, key: str) -> float:
    if len(value.split()) != 1:
        raise ParseError(line, f"{key}: takes a bare number, got {value!r}")
    return _parse_number(value, line)


def _parse_int(value: str, line: int, key: str) -> int:
    v = _parse_bare(value, line, key)
    if not float(v).is_integer():
        raise ParseError(line, f"{key}: expected an integer, got {value!r}")
    return int(v)


def _parse_area(value: str, line: int) -> float:
    parts = value.split()
    if len(parts) != 1:
        raise ParseError(line, f"area: malformed value {value!r}")
    token = parts[0]
    m = _PI_RE.match(token)
    if m:
        coeff = m.group(1)
        if coeff in ("", "+"):
            factor = 1.0
        elif coeff == "-":
            factor = -1.0
        else:
            factor = float(coeff)
        return factor * math.pi
    return _parse_number(token, line)


class _Statements:
    """Comment-stripped (line_no, text) statements with block structure."""

    def __init__(self, text: str):
        self.globals: list[tuple[int, str]] = []
        self.blocks: list[tuple[int, str, list[tuple[int, str]]]] = []
        block: list[tuple[int, str]] | None = None
        block_name = ""
        block_line = 0
        for ln, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            while line:
                if block is None:
                    m = _BLOCK_RE.match(line)
                    if m:
                        block_name, rest = m.group(1), m.group(2)
                        if not _NAME_RE.match(block_name):
                            raise ParseError(ln, f"invalid pulse name {block_name!r}")
                        block, block_line = [], ln
                        line = rest.strip()
                        continue
                    if "{" in line or "}" in line:
                        raise ParseError(ln, f"unexpected brace in {line!r}")
                    self.globals.append((ln, line))
                    line = ""
                else:
                    if "{" in line.split("}", 1)[0]:
                        raise ParseError(ln, "nested blocks are not allowed")
                    if "}" in line:
                        inner, after = line.split("}", 1)
                        self._add_stmts(block, ln, inner)
                        self.blocks.append((block_line, block_name, block))
                        block = None
                        if after.strip():
                            raise ParseError(ln, f"unexpected text after '}}': {after.strip()!r}")
                        line = ""
                    else:
                        self._add_stmts(block, ln, line)
                        line = ""
        if block is not None:
            raise ParseError(block_line, f"pulse block {block_name!r} is never closed")

    @staticmethod
    def _add_stmts(block, ln, text):
        for stmt in text.split(";"):
            stmt = stmt.strip()
            if stmt:
                block.append((ln, stmt))


def _split_kv(stmt: str, line: int) -> tuple[str, str]:
    if "=" not in stmt:
        raise ParseError(line, f"expected 'key = value', got {stmt!r}")
    key, value = stmt.split("=", 1)
    key, value = key.strip(), value.strip()
    if not _NAME_RE.match(key):
        raise ParseError(line, f"invalid key {key!r}")
    if not value:
        raise ParseError(line, f"{key}: missing value")
    return key, value


def parse(text: str) -> ParsedSequence:
    """Parse .dexseq text into (document, pulse sequence, physical constants)."""
    stmts = _Statements(text)

    doc = SeqDocument()
    seen: dict[str, int] = {}
    overrides: dict[str, float] = {}
    for ln, stmt in stmts.globals:
        key, value = _split_kv(stmt, ln)
        if key in seen or (key == "rep_rate" and "rep_period" in seen) or (
                key == "rep_period" and "rep_rate" in seen):
            raise ParseError(ln, f"duplicate global {key!r} (first on line {seen.get(key, ln)})")
        seen[key] = ln
        if key == "format":
            v = _parse_int(value, ln, key)
            if v != FORMAT_VERSION:
                raise ParseError(ln, f"unsupported format version {v}")
            doc.format = v
        elif key in ("seed", "trajectories"):
            doc.globals[key] = _parse_int(value, ln, key)
        elif key == "rep_rate":
            parts = value.split()
            if len(parts) == 2 and parts[1] != "MHz":
                raise ParseError(ln, f"rep_rate: expected MHz, got {parts[1]!r}")
            rate = _parse_number(parts[0], ln)
            if not rate > 0.0:
                raise ParseError(ln, "rep_rate must be positive")
            doc.globals["rep_period"] = 1000.0 / rate
        elif key in GLOBAL_TIME_KEYS:
            doc.globals[key] = _parse_time(value, ln, key)
        elif key in PARAM_TIME_KEYS:
            v = _parse_time(value, ln, key)
            doc.globals[key] = v
            overrides[key] = v
        elif key in PARAM_BARE_KEYS:
            v = _parse_bare(value, ln, key)
            doc.globals[key] = v
            overrides[key] = v
        else:
            raise ParseError(ln, f"unknown global key {key!r}")

    names = {}
    for bline, name, body in stmts.blocks:
        if name in names:
            raise ParseError(bline, f"duplicate pulse name {name!r} (first on line {names[name]})")
        names[name] = bline
        kv: dict = {}
        klines: dict[str, int] = {}
        for ln, stmt in body:
            key, value = _split_kv(stmt, ln)
            if key in kv:
                raise ParseError(ln, f"duplicate key {key!r} in pulse {name!r}")
            klines[key] = ln
            if key in ("t0", "duration"):
                kv[key] = _parse_time(value, ln, key)
            elif key in ("detuning", "bandwidth"):
                kv[key] = _parse_energy(value, ln, key)
            elif key == "area":
                kv[key] = _parse_area(value, ln)
            elif key == "power":
                kv[key] = _parse_bare(value, ln, key)
            elif key == "shape":
                try:
                    kv[key] = PulseShape(value).value
                except ValueError:
                    raise ParseError(ln, f"unknown shape {value!r}") from None
            elif key == "transition":
                try:
                    kv[key] = Transition(value).value
                except ValueError:
                    raise ParseError(ln, f"unknown transition {value!r}") from None
            elif key == "polarization":
                if value not in POLARIZATIONS:
                    raise ParseError(ln, f"unknown polarization {value!r}")
                kv[key] = value
            else:
                raise ParseError(ln, f"unknown pulse key {key!r}")
        for req in REQUIRED_PULSE_KEYS:
            if req not in kv:
                raise ParseError(bline, f"pulse {name!r}: missing required key {req!r}")
        if ("area" in kv) == ("power" in kv):
            raise ParseError(bline, f"pulse {name!r}: exactly one of area/power is required")
        if kv["shape"] == "cw" and "area" in kv:
            raise ParseError(klines["area"], f"pulse {name!r}: cw pulses take power, not area")
        if kv["shape"] != "cw" and "power" in kv:
            raise ParseError(klines["power"], f"pulse {name!r}: shaped pulses take area, not power")
        doc.pulses.append((name, kv))

    return build(doc)


def build(doc: SeqDocument) -> ParsedSequence:
    """Construct the pulse sequence and physical constants from a document."""
    overrides = {k: v for k, v in doc.globals.items()
                 if k in PARAM_TIME_KEYS or k in PARAM_BARE_KEYS}
    try:
        params = default_params().with_overrides(**overrides)
    except ValueError as exc:
        raise ParseError(0, f"invalid physical constants: {exc}") from None

    pulses = []
    for name, kv in doc.pulses:
        try:
            pulse = Pulse(
                name=name,
                t0=kv["t0"],
                duration=kv["duration"],
                shape=PulseShape(kv["shape"]),
                transition=Transition(kv["transition"]),
                polarization=POLARIZATIONS[kv["polarization"]],
                area=kv.get("area"),
                peak_rabi=kv.get("power"),
                detuning=kv.get("detuning", 0.0),
                bandwidth_sigma=kv.get("bandwidth"),
            )
        except ValueError as exc:
            raise ParseError(0, f"pulse {name!r}: {exc}") from None
        if pulse.shape is PulseShape.SECH and "bandwidth" in kv:
            from .pulses import sech_bandwidth_for_duration
            implied = sech_bandwidth_for_duration(kv["duration"])
            if abs(kv["bandwidth"] - implied) > 5e-3 * implied:
                raise ParseError(
                    0, f"pulse {name!r}: bandwidth {kv['bandwidth']:g} ueV is inconsistent "
                       f"with duration (implies {implied:g} ueV); give one or match them")
        pulses.append(pulse)

    try:
        seq = PulseSequence(
            pulses=tuple(pulses),
            rep_period=doc.globals.get("rep_period", 0.0),
            t_end=doc.globals.get("t_end", 0.0),
        )
    except ValueError as exc:
        raise ParseError(0, str(exc)) from None
    return ParsedSequence(doc, seq, params)


def _fmt(value) -> str:
    if isinstance(value, int):
        return str(value)
    if value == math.inf:
        return "inf"
    return f"{value:.6g}"


def _fmt_area(value: float) -> str:
    if abs(value - math.pi) < 1e-12:
        return "pi"
    if abs(value - 2.0 * math.pi) < 1e-12:
        return "2pi"
    return _fmt(value)


_GLOBAL_UNITS = {k: " ns" for k in GLOBAL_TIME_KEYS + PARAM_TIME_KEYS}
_PULSE_UNITS = {"t0": " ns", "duration": " ns", "detuning": " ueV", "bandwidth": " ueV"}


def serialize(doc: SeqDocument) -> str:
    """Canonical text form: sorted globals, pulses in t0 order, fixed key order."""
    lines = [f"format = {doc.format}"]
    for key in sorted(doc.globals):
        value = doc.globals[key]
        lines.append(f"{key} = {_fmt(value)}{_GLOBAL_UNITS.get(key, '')}")
    for name, kv in sorted(doc.pulses, key=lambda item: item[1]["t0"]):
        if not _NAME_RE.match(name):
            raise SerializeError(f"invalid pulse name {name!r}")
        lines.append(f"pulse {name} {{")
        for key in PULSE_KEY_ORDER:
            if key not in kv:
                continue
            value = kv[key]
            text = _fmt_area(value) if key == "area" else (
                value if isinstance(value, str) else _fmt(value))
            lines.append(f"  {key} = {text}{_PULSE_UNITS.get(key, '')}")
        lines.append("}")
    return "\n".join(lines) + "\n"
