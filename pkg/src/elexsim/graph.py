"""Node-element graph, series-branch decomposition and topology queries."""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .netlist import NetlistDoc


class TopologyError(ValueError):
    pass


class UnsupportedTopologyError(TopologyError):
    pass


@dataclass(frozen=True)
class Element:
    index: int
    name: str
    kind: str
    p: int
    n: int
    value: float
    von: float
    gate: object
    ic: float | None

    @property
    def is_switch(self):
        return self.kind in ("switch", "diode")


@dataclass
class CircuitGraph:
    node_names: list
    ground: int
    elements: list
    incidence: list  # per node: [(element index, +1 if node is p else -1)]

    @property
    def n_nodes(self):
        return len(self.node_names)

    def degree(self, node: int) -> int:
        return len(self.incidence[node])

    def node(self, name: str) -> int:
        return self.node_names.index(name)

    def element(self, name: str) -> Element:
        for el in self.elements:
            if el.name == name:
                return el
        raise KeyError(name)

    @property
    def switch_elements(self):
        """Switches and diodes in element order; the layout of a ``SwitchConfig``."""
        return [el.index for el in self.elements if el.is_switch]

    @property
    def source_nodes(self):
        out = set()
        for el in self.elements:
            if el.kind == "vdc":
                out.update((el.p, el.n))
        return out


@dataclass(frozen=True)
class Branch:
    id: int
    elements: tuple  # element indices, head -> tail
    signs: tuple  # +1 where the element is traversed p -> n
    nodes: tuple  # head, interior..., tail
    inductor_count: int
    switch_count: int
    has_non_switch_non_inductor: bool

    @property
    def head(self):
        return self.nodes[0]

    @property
    def tail(self):
        return self.nodes[-1]

    @property
    def interior(self):
        return self.nodes[1:-1]

    @property
    def is_switch_only(self):
        return self.switch_count == len(self.elements)

    @property
    def label(self):
        return f"b{self.id}"

    def sign_of(self, element: int) -> int:
        return self.signs[self.elements.index(element)]


class BranchStatus(enum.Enum):
    ON = "ON"
    OFF = "OFF"
    NOSWITCH = "NOSWITCH"


@dataclass(frozen=True)
class SwitchConfig:
    """On/off state of every switch and diode, ordered by element index."""

    states: tuple

    def __len__(self):
        return len(self.states)

    def __getitem__(self, k):
        return self.states[k]

    @property
    def bitstring(self):
        return "".join("1" if s else "0" for s in self.states)

    @classmethod
    def from_bitstring(cls, bits: str) -> "SwitchConfig":
        if any(c not in "01" for c in bits):
            raise ValueError(f"bad config bitstring {bits!r}")
        return cls(tuple(c == "1" for c in bits))

    def replace(self, k: int, on: bool) -> "SwitchConfig":
        states = list(self.states)
        states[k] = on
        return SwitchConfig(tuple(states))


def build_graph(doc: NetlistDoc) -> CircuitGraph:
    names = doc.node_names
    if "0" not in names:
        raise TopologyError("no ground node (node 0)")
    index = {name: k for k, name in enumerate(names)}
    incidence = [[] for _ in names]
    elements = []
    for k, decl in enumerate(doc.elements):
        p, n = index[decl.p], index[decl.n]
        elements.append(
            Element(k, decl.name, decl.kind, p, n, decl.value, decl.von, decl.gate, decl.ic)
        )
        incidence[p].append((k, +1))
        incidence[n].append((k, -1))
    return CircuitGraph(names, index["0"], elements, incidence)


def _components(n_nodes, edges):
    parent = list(range(n_nodes))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, b in edges:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    return find


def junction_nodes(g: CircuitGraph) -> set:
    """Branch terminals: degree other than 2, ground, or a source endpoint."""
    out = {g.ground} | g.source_nodes
    out.update(k for k in range(g.n_nodes) if g.degree(k) != 2)
    return out


def decompose_branches(g: CircuitGraph) -> list:
    """Partition the elements into maximal series chains between junction nodes.

    Each branch is oriented so that its lowest-index element is traversed
    p -> n; branch current is positive head -> tail.
    """
    find = _components(g.n_nodes, [(el.p, el.n) for el in g.elements])
    root = find(g.ground)
    stranded = [g.node_names[k] for k in range(g.n_nodes) if find(k) != root]
    if stranded:
        raise TopologyError(f"disconnected circuit; stranded nodes: {', '.join(stranded)}")

    junctions = junction_nodes(g)
    assigned = set()
    branches = []

    def other(el, node):
        return g.elements[el].n if g.elements[el].p == node else g.elements[el].p

    def walk(start_el, node):
        chain = []
        prev = start_el
        while node not in junctions:
            nxt = [e for e, _ in g.incidence[node] if e != prev][0]
            if nxt == start_el:  # pragma: no cover - rings always contain a junction here
                break
            chain.append((nxt, node))
            prev = nxt
            node = other(nxt, node)
        return chain, node

    for el in g.elements:
        if el.index in assigned:
            continue
        if el.kind == "vdc":
            chain_elems = [(el.index, +1)]
            nodes = [el.p, el.n]
        else:
            fwd, tail = walk(el.index, el.n)
            bwd, head = walk(el.index, el.p)
            chain_elems = []
            nodes = [head]
            for e, enter in reversed(bwd):
                # walking back we left ``enter`` towards head; traversal is the reverse
                far = other(e, enter)
                chain_elems.append((e, +1 if g.elements[e].p == far else -1))
                nodes.append(enter)
            chain_elems.append((el.index, +1))
            nodes.append(el.n)
            for e, enter in fwd:
                chain_elems.append((e, +1 if g.elements[e].p == enter else -1))
                nodes.append(other(e, enter))
            assert nodes[-1] == tail
        elems = tuple(e for e, _ in chain_elems)
        assigned.update(elems)
        kinds = [g.elements[e].kind for e in elems]
        branches.append(
            Branch(
                id=len(branches),
                elements=elems,
                signs=tuple(s for _, s in chain_elems),
                nodes=tuple(nodes),
                inductor_count=kinds.count("inductor"),
                switch_count=sum(k in ("switch", "diode") for k in kinds),
                has_non_switch_non_inductor=any(
                    k not in ("switch", "diode", "inductor") for k in kinds
                ),
            )
        )
    return branches


def is_source_branch(g: CircuitGraph, b: Branch) -> bool:
    return len(b.elements) == 1 and g.elements[b.elements[0]].kind == "vdc"


def classify_branches(g: CircuitGraph, branches, cfg: SwitchConfig) -> dict:
    """Map branch id -> BranchStatus under ``cfg``."""
    pos = {e: k for k, e in enumerate(g.switch_elements)}
    status = {}
    for b in branches:
        sw = [cfg[pos[e]] for e in b.elements if e in pos]
        if not sw:
            status[b.id] = BranchStatus.NOSWITCH
        elif all(sw):
            status[b.id] = BranchStatus.ON
        else:
            status[b.id] = BranchStatus.OFF
    return status


def conduction_path_exists(g: CircuitGraph, branches, cfg: SwitchConfig, branch: Branch) -> bool:
    """True iff ``branch`` closes a loop through conducting branches only.

    OFF branches are removed; everything else (sources, R, C, L, on
    switches) conducts.
    """
    if branch.head == branch.tail:
        return True
    status = classify_branches(g, branches, cfg)
    edges = [
        (b.head, b.tail)
        for b in branches
        if b.id != branch.id and status[b.id] is not BranchStatus.OFF
    ]
    find = _components(g.n_nodes, edges)
    return find(branch.head) == find(branch.tail)


def parallel_on_groups(branches, status: dict) -> list:
    """Groups (sorted branch-id lists) of >= 2 switch-only ON branches on the same terminal pair."""
    buckets = {}
    for b in branches:
        if b.is_switch_only and status[b.id] is BranchStatus.ON and b.head != b.tail:
            buckets.setdefault(frozenset((b.head, b.tail)), []).append(b.id)
    return [sorted(ids) for ids in buckets.values() if len(ids) >= 2]


def dump_topology(g: CircuitGraph, branches, cfg: SwitchConfig | None = None) -> str:
    lines = []
    status = classify_branches(g, branches, cfg) if cfg is not None else None
    for b in branches:
        elems = ",".join(g.elements[e].name for e in b.elements)
        line = (
            f"branch {b.label} head={g.node_names[b.head]} tail={g.node_names[b.tail]} "
            f"elements={elems} inductors={b.inductor_count} switches={b.switch_count}"
        )
        if status is not None:
            line += f" status={status[b.id].value}"
        lines.append(line)
    if cfg is not None:
        names = [g.elements[e].name for e in g.switch_elements]
        states = " ".join(f"{n}={'on' if s else 'off'}" for n, s in zip(names, cfg.states))
        lines.append(f"config {cfg.bitstring} {states}".rstrip())
        for group in parallel_on_groups(branches, status):
            lines.append("group " + ",".join(f"b{i}" for i in group))
    return "\n".join(lines)
