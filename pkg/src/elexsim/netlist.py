"""Netlist dialect for the switched-circuit simulator.

A netlist is a SPICE-like line format::

    .title boost converter
    Vdc 1 0 10
    L   1 2 20u
    S   2 0 von=0 pulse(period=1e-4 duty=0.5 delay=0)
    D   2 3 von=0
    C   3 0 40u ic=0
    R   3 0 10
    .tran 1e-7 5e-3 hmin=1e-12 hmax=1e-5
    .method rkf tol=1e-6
    .probe v(3) i(L)

The element kind is taken from the first letter of its name.  Lines starting
with ``*`` or ``;`` are comments; a trailing ``;`` starts an inline comment.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

KINDS = {
    "V": "vdc",
    "R": "resistor",
    "C": "capacitor",
    "L": "inductor",
    "S": "switch",
    "D": "diode",
}
PREFIX = {v: k for k, v in KINDS.items()}

_SUFFIXES = [
    ("meg", 1e6),
    ("f", 1e-15),
    ("p", 1e-12),
    ("n", 1e-9),
    ("u", 1e-6),
    ("m", 1e-3),
    ("k", 1e3),
    ("g", 1e9),
    ("t", 1e12),
]

_NUMBER = re.compile(r"^([+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)([a-zA-Z]*)$")
_PROBE = re.compile(r"^([vViI])\(([^()\s,]+)\)$")


class NetlistError(ValueError):
    """Raised when a netlist cannot be parsed.

    ``diagnostics`` holds every problem found, each as a ``Diagnostic``.
    """

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("\n".join(str(d) for d in self.diagnostics))


@dataclass(frozen=True)
class Diagnostic:
    line: int
    col: int
    message: str

    def __str__(self):
        return f"{self.line}:{self.col}: {self.message}"


@dataclass(frozen=True)
class PulseGate:
    """Periodic gate drive: on during ``[delay + k*period, delay + (k+duty)*period)``."""

    period: float
    duty: float
    delay: float = 0.0

    def _eps(self):
        return 1e-9 * self.period

    def state(self, t: float) -> bool:
        if t < self.delay - self._eps():
            return False
        pos = (t - self.delay) / self.period
        k = math.floor(pos + 1e-9)
        frac = pos - k
        return frac < self.duty - 1e-9

    def next_edge(self, t: float) -> float:
        """First gate edge strictly after ``t``."""
        if self.duty <= 0.0 or self.duty >= 1.0:
            return math.inf
        eps = self._eps()
        if t < self.delay - eps:
            return self.delay
        k = math.floor((t - self.delay) / self.period + 1e-9)
        for j in (k, k + 1, k + 2):
            for frac in (0.0, self.duty):
                edge = self.delay + (j + frac) * self.period
                if edge > t + eps:
                    return edge
        return math.inf  # pragma: no cover

    def to_text(self) -> str:
        return (
            f"pulse(period={_fmt(self.period)} duty={_fmt(self.duty)} "
            f"delay={_fmt(self.delay)})"
        )


@dataclass(frozen=True)
class EventGate:
    """Explicit gate schedule; the switch is off before the first event."""

    events: tuple  # ((time, on), ...) sorted by time

    def state(self, t: float) -> bool:
        on = False
        for time, value in self.events:
            if time <= t + 1e-15 + 1e-12 * abs(time):
                on = value
            else:
                break
        return on

    def next_edge(self, t: float) -> float:
        for time, _ in self.events:
            if time > t + 1e-15 + 1e-12 * abs(time):
                return time
        return math.inf

    def to_text(self) -> str:
        body = " ".join(f"{_fmt(time)}:{'on' if on else 'off'}" for time, on in self.events)
        return f"events({body})"


@dataclass(frozen=True)
class ElementDecl:
    name: str
    kind: str
    nodes: tuple
    value: float = 0.0
    von: float = 0.0
    gate: PulseGate | EventGate | None = None
    ic: float | None = None
    line: int = 0

    @property
    def p(self):
        return self.nodes[0]

    @property
    def n(self):
        return self.nodes[1]


@dataclass(frozen=True)
class Probe:
    kind: str  # "v" or "i"
    target: str

    @property
    def label(self):
        return f"{self.kind}({self.target})"


@dataclass
class SimDirectives:
    t_stop: float
    h_init: float
    h_min: float | None = None
    h_max: float | None = None
    method: str = "rkf"
    rkf_tol: float = 1e-6
    outputs: list = field(default_factory=list)

    def __post_init__(self):
        if self.h_min is None:
            self.h_min = min(self.h_init, 1e-12 * max(self.t_stop, self.h_init) + 1e-15)
        if self.h_max is None:
            self.h_max = max(self.h_init, self.t_stop)


@dataclass
class NetlistDoc:
    title: str
    elements: list
    directives: SimDirectives

    @property
    def node_names(self):
        names = []
        for el in self.elements:
            for node in el.nodes:
                if node not in names:
                    names.append(node)
        return names

    def element(self, name: str) -> ElementDecl:
        for el in self.elements:
            if el.name == name:
                return el
        raise KeyError(name)

    def replace_directives(self, **changes) -> "NetlistDoc":
        d = self.directives
        fields = dict(
            t_stop=d.t_stop,
            h_init=d.h_init,
            h_min=d.h_min,
            h_max=d.h_max,
            method=d.method,
            rkf_tol=d.rkf_tol,
            outputs=list(d.outputs),
        )
        fields.update(changes)
        return NetlistDoc(self.title, list(self.elements), SimDirectives(**fields))


def parse_value(text: str) -> float:
    """Parse a number with an optional engineering suffix (``4.7k``, ``20u``)."""
    m = _NUMBER.match(text.strip())
    if not m:
        raise ValueError(f"bad number {text!r}")
    value = float(m.group(1))
    suffix = m.group(2).lower()
    if not suffix:
        return value
    for name, scale in _SUFFIXES:
        if suffix.startswith(name):
            return value * scale
    raise ValueError(f"bad number {text!r}")


def _fmt(x: float) -> str:
    return repr(float(x))


def _tokenize(line: str):
    """Split into (token, col) pairs; parenthesised groups stay whole."""
    tokens = []
    i, n = 0, len(line)
    while i < n:
        if line[i].isspace():
            i += 1
            continue
        start = i
        depth = 0
        while i < n and (depth > 0 or not line[i].isspace()):
            if line[i] == "(":
                depth += 1
            elif line[i] == ")":
                depth -= 1
            i += 1
        tokens.append((line[start:i], start + 1))
    return tokens


def _kv(tokens, lineno, diags, allowed):
    out = {}
    for tok, col in tokens:
        if "=" not in tok:
            diags.append(Diagnostic(lineno, col, f"expected key=value, got {tok!r}"))
            continue
        key, _, val = tok.partition("=")
        key = key.lower()
        if key not in allowed:
            diags.append(Diagnostic(lineno, col, f"unknown parameter {key!r}"))
            continue
        try:
            out[key] = parse_value(val)
        except ValueError:
            diags.append(Diagnostic(lineno, col, f"bad value {val!r} for {key}"))
    return out


def _parse_gate(tok, col, lineno, diags):
    head, _, rest = tok.partition("(")
    if not rest.endswith(")"):
        diags.append(Diagnostic(lineno, col, f"unbalanced parentheses in {tok!r}"))
        return None
    body = rest[:-1].split()
    head = head.lower()
    if head == "pulse":
        vals = _kv([(b, col) for b in body], lineno, diags, {"period", "duty", "delay"})
        if "period" not in vals or "duty" not in vals:
            diags.append(Diagnostic(lineno, col, "pulse() needs period= and duty="))
            return None
        if vals["period"] <= 0 or not 0.0 <= vals["duty"] <= 1.0:
            diags.append(Diagnostic(lineno, col, "pulse() needs period > 0 and 0 <= duty <= 1"))
            return None
        return PulseGate(vals["period"], vals["duty"], vals.get("delay", 0.0))
    if head == "events":
        events = []
        for item in body:
            time, _, state = item.partition(":")
            state = state.lower()
            try:
                t = parse_value(time)
            except ValueError:
                diags.append(Diagnostic(lineno, col, f"bad event time {time!r}"))
                return None
            if state not in ("on", "off"):
                diags.append(Diagnostic(lineno, col, f"bad event state {state!r}"))
                return None
            events.append((t, state == "on"))
        if any(b[0] < a[0] for a, b in zip(events, events[1:])):
            diags.append(Diagnostic(lineno, col, "events() times must be sorted"))
            return None
        return EventGate(tuple(events))
    diags.append(Diagnostic(lineno, col, f"unknown gate schedule {head!r}"))
    return None


def _parse_element(tokens, lineno, diags):
    (name, col) = tokens[0]
    kind = KINDS.get(name[0].upper())
    if kind is None:
        diags.append(Diagnostic(lineno, col, f"unknown element kind for {name!r}"))
        return None
    if len(tokens) < 3:
        diags.append(Diagnostic(lineno, col, f"{name}: expected 2 nodes"))
        return None
    nodes = (tokens[1][0], tokens[2][0])
    for tok, c in tokens[1:3]:
        if "=" in tok or "(" in tok:
            diags.append(Diagnostic(lineno, c, f"{name}: bad node name {tok!r}"))
            return None
    rest = tokens[3:]
    nerr = len(diags)

    if kind in ("vdc", "resistor", "capacitor", "inductor"):
        if not rest or "=" in rest[0][0]:
            diags.append(Diagnostic(lineno, col, f"{name}: missing value"))
            return None
        try:
            value = parse_value(rest[0][0])
        except ValueError:
            diags.append(Diagnostic(lineno, rest[0][1], f"{name}: bad value {rest[0][0]!r}"))
            return None
        allowed = {"ic"} if kind in ("capacitor", "inductor") else set()
        opts = _kv(rest[1:], lineno, diags, allowed)
        if len(diags) > nerr:
            return None
        return ElementDecl(name, kind, nodes, value=value, ic=opts.get("ic"), line=lineno)

    gate = None
    kvs = []
    for tok, c in rest:
        if "(" in tok:
            if kind == "diode":
                diags.append(Diagnostic(lineno, c, f"{name}: diodes take no gate schedule"))
                return None
            if gate is not None:
                diags.append(Diagnostic(lineno, c, f"{name}: duplicate gate schedule"))
                return None
            gate = _parse_gate(tok, c, lineno, diags)
        else:
            kvs.append((tok, c))
    opts = _kv(kvs, lineno, diags, {"von"})
    if len(diags) > nerr:
        return None
    if kind == "switch" and gate is None:
        diags.append(Diagnostic(lineno, col, f"{name}: switch needs pulse(...) or events(...)"))
        return None
    return ElementDecl(name, kind, nodes, von=opts.get("von", 0.0), gate=gate, line=lineno)


def parse_netlist(text) -> NetlistDoc:
    """Parse netlist text (``str`` or UTF-8 ``bytes``).

    Raises ``NetlistError`` carrying every diagnostic found; no other
    exception escapes for any input.
    """
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise NetlistError([Diagnostic(1, exc.start + 1, "input is not valid UTF-8")])
    diags = []
    elements = []
    seen = {}
    title = ""
    tran = None
    method = None
    tol = None
    probes = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split(";", 1)[0]
        stripped = line.strip()
        if not stripped or stripped.startswith("*"):
            continue
        if "\x00" in line:
            diags.append(Diagnostic(lineno, line.index("\x00") + 1, "NUL byte in line"))
            continue
        tokens = _tokenize(line)
        head, col = tokens[0]

        if head.startswith("."):
            directive = head.lower()
            args = tokens[1:]
            if directive == ".title":
                title = stripped[len(head):].strip()
            elif directive == ".end":
                break
            elif directive == ".tran":
                if len(args) < 2:
                    diags.append(Diagnostic(lineno, col, ".tran needs h_init and t_stop"))
                    continue
                try:
                    h_init = parse_value(args[0][0])
                    t_stop = parse_value(args[1][0])
                except ValueError:
                    diags.append(Diagnostic(lineno, col, ".tran: bad number"))
                    continue
                opts = _kv(args[2:], lineno, diags, {"hmin", "hmax"})
                tran = (h_init, t_stop, opts.get("hmin"), opts.get("hmax"))
            elif directive == ".method":
                if not args or args[0][0].lower() not in ("fe", "rkf"):
                    diags.append(Diagnostic(lineno, col, ".method must be fe or rkf"))
                    continue
                method = args[0][0].lower()
                opts = _kv(args[1:], lineno, diags, {"tol"})
                tol = opts.get("tol", tol)
            elif directive == ".probe":
                for tok, c in args:
                    m = _PROBE.match(tok)
                    if not m:
                        diags.append(Diagnostic(lineno, c, f"bad probe {tok!r}"))
                        continue
                    probes.append(Probe(m.group(1).lower(), m.group(2)))
            else:
                diags.append(Diagnostic(lineno, col, f"unknown directive {head!r}"))
            continue

        el = _parse_element(tokens, lineno, diags)
        if el is None:
            continue
        if el.name in seen:
            diags.append(
                Diagnostic(lineno, col, f"duplicate element name {el.name!r} (first on line {seen[el.name]})")
            )
            continue
        seen[el.name] = lineno
        elements.append(el)

    if not elements and not diags:
        diags.append(Diagnostic(1, 1, "no elements"))
    if tran is None and not diags:
        diags.append(Diagnostic(1, 1, "missing .tran directive"))
    if diags:
        raise NetlistError(diags)

    h_init, t_stop, h_min, h_max = tran
    for probe in probes:
        if probe.kind == "i" and probe.target not in seen:
            diags.append(Diagnostic(0, 0, f"probe {probe.label}: no such element"))
    if diags:
        raise NetlistError(diags)
    directives = SimDirectives(
        t_stop=t_stop,
        h_init=h_init,
        h_min=h_min,
        h_max=h_max,
        method=method or "rkf",
        rkf_tol=1e-6 if tol is None else tol,
        outputs=probes,
    )
    return NetlistDoc(title, elements, directives)


def validate(doc: NetlistDoc) -> list:
    """Return a list of human-readable findings; empty means ready to simulate."""
    findings = []
    names = doc.node_names
    if "0" not in names:
        findings.append("no ground node (node 0)")
    degree = {n: 0 for n in names}
    source_nodes = set()
    for el in doc.elements:
        for node in el.nodes:
            degree[node] += 1
        if el.kind == "vdc":
            source_nodes.update(el.nodes)
        if el.nodes[0] == el.nodes[1]:
            findings.append(f"{el.name}: both terminals on node {el.p}")
        if el.kind in ("resistor", "capacitor", "inductor") and not el.value > 0:
            findings.append(f"{el.name}: non-positive parameter ({el.value})")
        if el.kind in ("switch", "diode") and not el.von >= 0:
            findings.append(f"{el.name}: negative von ({el.von})")
        if not all(math.isfinite(x) for x in (el.value, el.von)):
            findings.append(f"{el.name}: non-finite parameter")
    for node, deg in degree.items():
        if deg == 1 and node not in source_nodes:
            findings.append(f"dangling node {node}")
    d = doc.directives
    if not 0 < d.h_min <= d.h_init <= d.h_max:
        findings.append("time steps must satisfy 0 < hmin <= h_init <= hmax")
    if d.t_stop < 0:
        findings.append("t_stop must be >= 0")
    elif d.t_stop > 0 and d.h_max > d.t_stop:
        findings.append("hmax must not exceed t_stop")
    if not d.rkf_tol > 0:
        findings.append("tol must be > 0")
    for probe in d.outputs:
        if probe.kind == "v" and probe.target not in names:
            findings.append(f"probe {probe.label}: no such node")
    return findings


def to_text(doc: NetlistDoc) -> str:
    """Serialize ``doc`` back to netlist text; ``parse_netlist`` inverts it."""
    lines = []
    if doc.title:
        lines.append(f".title {doc.title}")
    for el in doc.elements:
        parts = [el.name, el.p, el.n]
        if el.kind in ("switch", "diode"):
            parts.append(f"von={_fmt(el.von)}")
            if el.gate is not None:
                parts.append(el.gate.to_text())
        else:
            parts.append(_fmt(el.value))
            if el.ic is not None:
                parts.append(f"ic={_fmt(el.ic)}")
        lines.append(" ".join(parts))
    d = doc.directives
    lines.append(
        f".tran {_fmt(d.h_init)} {_fmt(d.t_stop)} hmin={_fmt(d.h_min)} hmax={_fmt(d.h_max)}"
    )
    lines.append(f".method {d.method} tol={_fmt(d.rkf_tol)}")
    if d.outputs:
        lines.append(".probe " + " ".join(p.label for p in d.outputs))
    lines.append(".end")
    return "\n".join(lines) + "\n"
