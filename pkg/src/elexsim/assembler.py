"""Per-configuration algebraic system: element stamps plus topology rows.

Rows come in three families, each carrying a provenance tag:

* ``ES:<element>``      element stamps (source, R, C, L, switch/diode)
* ``CTDC:<rule>``       topology rows valid in every switch configuration
* ``CTDV:<rule>``       topology rows that depend on the configuration

The right-hand side of capacitor and inductor stamps is the integrator
state; rows record which state entry feeds them so that a configuration's
matrix can be factored once and reused with a fresh right-hand side.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import (
    BranchStatus,
    CircuitGraph,
    SwitchConfig,
    UnsupportedTopologyError,
    _components,
    classify_branches,
    conduction_path_exists,
    is_source_branch,
    parallel_on_groups,
)


class AssemblyError(ValueError):
    pass


@dataclass
class Row:
    coeffs: dict  # column -> coefficient
    rhs: float
    tag: str
    state: int | None = None  # rhs is state[state] when set
    ik: int | None = None  # rhs is -I_k of this element (parallel-resistor path)


class VarCatalog:
    """Ordered unknowns.  Keys are tuples:

    ``("V", node)``, ``("i", branch)``, ``("iL", el)``, ``("iLd", el)``,
    ``("isw", el)``, ``("Vsw", el)``.
    """

    def __init__(self, g: CircuitGraph, branches):
        keys = [("V", k) for k in range(g.n_nodes) if k != g.ground]
        keys += [("i", b.id) for b in branches if not is_source_branch(g, b)]
        for el in g.elements:
            if el.kind == "inductor":
                keys += [("iL", el.index), ("iLd", el.index)]
            elif el.is_switch:
                keys += [("isw", el.index), ("Vsw", el.index)]
        self.keys = keys
        self.index = {k: i for i, k in enumerate(keys)}
        self._g = g

    def __len__(self):
        return len(self.keys)

    def __getitem__(self, key):
        return self.index[key]

    def __contains__(self, key):
        return key in self.index

    def name(self, key) -> str:
        g = self._g
        kind, ref = key
        if kind == "V":
            return f"V({g.node_names[ref]})"
        if kind == "i":
            return f"i(b{ref})"
        el = g.elements[ref].name
        return {"iL": "i_L", "iLd": "i_Ld", "isw": "i_sw", "Vsw": "V_sw"}[kind] + f"({el})"

    @property
    def names(self):
        return [self.name(k) for k in self.keys]


@dataclass
class LinearSystem:
    catalog: VarCatalog
    rows: list

    @property
    def n(self):
        return len(self.catalog)

    @property
    def row_tags(self):
        return [r.tag for r in self.rows]

    def matrix(self) -> np.ndarray:
        A = np.zeros((len(self.rows), self.n))
        for i, row in enumerate(self.rows):
            for j, c in row.coeffs.items():
                A[i, j] += c
        return A

    def rhs(self, state=None, ik=None) -> np.ndarray:
        b = np.zeros(len(self.rows))
        for i, row in enumerate(self.rows):
            if row.state is not None:
                b[i] = state[row.state]
            elif row.ik is not None:
                b[i] = -(ik or {}).get(row.ik, 0.0)
            else:
                b[i] = row.rhs
        return b

    @property
    def A(self):
        return self.matrix()

    def describe(self, row: Row) -> str:
        terms = []
        for j, c in sorted(row.coeffs.items()):
            if c == 0:
                continue
            name = self.catalog.name(self.catalog.keys[j])
            sign = "-" if c < 0 else "+"
            mag = abs(c)
            body = name if mag == 1 else f"{mag:.6g}*{name}"
            terms.append((sign, body))
        if not terms:
            lhs = "0"
        else:
            lhs = ("-" if terms[0][0] == "-" else "") + terms[0][1]
            lhs += "".join(f" {s} {t}" for s, t in terms[1:])
        if row.state is not None:
            rhs = f"state[{row.state}]"
        elif row.ik is not None:
            rhs = f"-I_k({self.catalog._g.elements[row.ik].name})"
        else:
            rhs = f"{row.rhs:.6g}"
        return f"{row.tag} {lhs} = {rhs}"

    def dump(self) -> str:
        return "\n".join(self.describe(r) for r in self.rows)


@dataclass
class Topology:
    """Everything the assembler needs that does not change during a run."""

    graph: CircuitGraph
    branches: list
    catalog: VarCatalog = field(init=False)
    state_elements: list = field(init=False)  # capacitors then inductors

    def __post_init__(self):
        g = self.graph
        self.catalog = VarCatalog(g, self.branches)
        caps = [el.index for el in g.elements if el.kind == "capacitor"]
        inds = [el.index for el in g.elements if el.kind == "inductor"]
        self.state_elements = caps + inds
        self.state_pos = {e: k for k, e in enumerate(self.state_elements)}
        self.switch_pos = {e: k for k, e in enumerate(g.switch_elements)}
        self.branch_of = {}
        for b in self.branches:
            for e in b.elements:
                self.branch_of[e] = b
        for b in self.branches:
            if b.inductor_count and b.switch_count:
                names = ",".join(g.elements[e].name for e in b.elements)
                raise UnsupportedTopologyError(
                    f"branch b{b.id} ({names}) mixes inductors and switches; "
                    "no topology rule covers this case"
                )

    @property
    def n_caps(self):
        return sum(self.graph.elements[e].kind == "capacitor" for e in self.state_elements)

    def element_current(self, element: int) -> tuple:
        """(column, sign) such that the element's p->n current is sign*x[column]."""
        b = self.branch_of[element]
        return self.catalog[("i", b.id)], b.sign_of(element)

    def kcl_coeffs(self, node: int) -> dict:
        """Coefficients of (currents into node) over incident non-source branches."""
        cat = self.catalog
        coeffs = {}
        for b in self.branches:
            if is_source_branch(self.graph, b) or b.head == b.tail:
                continue
            col = cat[("i", b.id)]
            if b.tail == node:
                coeffs[col] = coeffs.get(col, 0.0) + 1.0
            if b.head == node:
                coeffs[col] = coeffs.get(col, 0.0) - 1.0
        return coeffs


def _v(cat, g, node, coeff, coeffs):
    if node != g.ground:
        col = cat[("V", node)]
        coeffs[col] = coeffs.get(col, 0.0) + coeff


def assemble_es(topo: Topology, cfg: SwitchConfig, rp=None) -> list:
    """Element stamp rows.  With ``rp`` set, off switches get the
    parallel-conductance stamp ``i_sw - G_p V_sw = -I_k`` instead of ``i_sw = 0``."""
    g, cat = topo.graph, topo.catalog
    rows = []
    for el in g.elements:
        tag = f"ES:{el.name}"
        if el.kind == "vdc":
            c = {}
            _v(cat, g, el.p, 1.0, c)
            _v(cat, g, el.n, -1.0, c)
            rows.append(Row(c, el.value, tag))
        elif el.kind == "resistor":
            col, s = topo.element_current(el.index)
            c = {col: float(s)}
            _v(cat, g, el.p, -1.0 / el.value, c)
            _v(cat, g, el.n, 1.0 / el.value, c)
            rows.append(Row(c, 0.0, tag))
        elif el.kind == "capacitor":
            c = {}
            _v(cat, g, el.p, 1.0, c)
            _v(cat, g, el.n, -1.0, c)
            rows.append(Row(c, 0.0, tag, state=topo.state_pos[el.index]))
        elif el.kind == "inductor":
            rows.append(
                Row({cat[("iL", el.index)]: 1.0}, 0.0, tag, state=topo.state_pos[el.index])
            )
            c = {cat[("iLd", el.index)]: -el.value}
            _v(cat, g, el.p, 1.0, c)
            _v(cat, g, el.n, -1.0, c)
            rows.append(Row(c, 0.0, tag))
        else:
            on = cfg[topo.switch_pos[el.index]]
            if on:
                rows.append(Row({cat[("Vsw", el.index)]: 1.0}, el.von, tag))
            elif rp is not None:
                gp = 1.0 / rp.r_p_switch
                c = {cat[("isw", el.index)]: 1.0, cat[("Vsw", el.index)]: -gp}
                rows.append(Row(c, 0.0, tag + ":Rp", ik=el.index))
            else:
                rows.append(Row({cat[("isw", el.index)]: 1.0}, 0.0, tag))
    return rows


def _node_rule(topo, node, has_path, naive):
    """"kcl" or "didt" (sum of inductor derivatives) for a junction node."""
    g = topo.graph
    incident = [
        b for b in topo.branches
        if not is_source_branch(g, b) and b.head != b.tail and node in (b.head, b.tail)
    ]
    if naive or not incident:
        return "kcl", incident
    # a node touching an inductor branch with no path keeps KCL, as does a
    # node with any inductor-free branch; otherwise sum the derivatives
    if any(b.inductor_count and not has_path[b.id] for b in incident):
        return "kcl", incident
    if all(b.inductor_count for b in incident):
        return "didt", incident
    return "kcl", incident


def _kcl_nodes(topo):
    """Nodes (or source-tied supernodes) that need a current balance row."""
    g = topo.graph
    sources = [(el.p, el.n) for el in g.elements if el.kind == "vdc"]
    find = _components(g.n_nodes, sources)
    touched = {n for pair in sources for n in pair}
    groups = {}
    for node in touched:
        groups.setdefault(find(node), set()).add(node)
    singles = [k for k in range(g.n_nodes) if k != g.ground and k not in touched]
    supernodes = [sorted(nodes) for nodes in groups.values() if g.ground not in nodes]
    return singles, supernodes


def inductor_paths(topo: Topology, cfg: SwitchConfig) -> dict:
    g = topo.graph
    return {
        b.id: conduction_path_exists(g, topo.branches, cfg, b)
        for b in topo.branches
        if b.inductor_count
    }


def assemble_ctdc(topo: Topology, cfg: SwitchConfig, naive=False, rp=None) -> list:
    """KCL rows, switch-branch ties, and inductor-branch ties where a path exists."""
    g, cat = topo.graph, topo.catalog
    rows = []
    has_path = inductor_paths(topo, cfg)
    singles, supernodes = _kcl_nodes(topo)
    junction = {b.head for b in topo.branches} | {b.tail for b in topo.branches}
    for node in singles:
        if node not in junction:
            continue  # interior nodes are covered by the branch rows
        rule, _ = _node_rule(topo, node, has_path, naive or rp is not None)
        if rule == "kcl":
            rows.append(Row(topo.kcl_coeffs(node), 0.0, f"CTDC:KCL({g.node_names[node]})"))
    for group in supernodes:
        coeffs = {}
        for node in group:
            for col, c in topo.kcl_coeffs(node).items():
                coeffs[col] = coeffs.get(col, 0.0) + c
        label = "+".join(g.node_names[k] for k in group)
        rows.append(Row(coeffs, 0.0, f"CTDC:KCL({label})"))

    for b in topo.branches:
        if b.switch_count:
            first = next(e for e in b.elements if g.elements[e].is_switch)
            rows.append(
                Row(
                    {cat[("i", b.id)]: 1.0, cat[("isw", first)]: -float(b.sign_of(first))},
                    0.0,
                    f"CTDC:tie-sw(b{b.id})",
                )
            )
        elif b.inductor_count and rp is None and (naive or has_path[b.id]):
            first = next(e for e in b.elements if g.elements[e].kind == "inductor")
            rows.append(
                Row(
                    {cat[("i", b.id)]: 1.0, cat[("iL", first)]: -float(b.sign_of(first))},
                    0.0,
                    f"CTDC:tie-L(b{b.id})",
                )
            )
    return rows


def assemble_ctdv(topo: Topology, cfg: SwitchConfig, naive=False, rp=None) -> list:
    """Configuration-dependent rows (inductor rules 1-3, OFF/ON switch branches)."""
    g, cat = topo.graph, topo.catalog
    rows = []
    has_path = inductor_paths(topo, cfg)
    status = classify_branches(g, topo.branches, cfg)
    groups = parallel_on_groups(topo.branches, status)
    in_group = {bid: grp for grp in groups for bid in grp}

    # inductor branches
    for b in topo.branches:
        if not b.inductor_count:
            continue
        inds = [e for e in b.elements if g.elements[e].kind == "inductor"]
        if rp is not None:
            gp = 1.0 / rp.r_p_inductor
            for e in inds:
                el = g.elements[e]
                c = {cat[("i", b.id)]: float(b.sign_of(e)), cat[("iL", e)]: -1.0}
                _v(cat, g, el.p, -gp, c)
                _v(cat, g, el.n, gp, c)
                rows.append(Row(c, 0.0, f"CTDV:Rp({el.name})"))
            continue
        first = inds[0]
        for e in inds[1:]:
            rows.append(
                Row(
                    {cat[("iLd", e)]: float(b.sign_of(e)), cat[("iLd", first)]: -float(b.sign_of(first))},
                    0.0,
                    f"CTDV:R1({g.elements[e].name})",
                )
            )
        if not naive and not has_path[b.id]:
            rows.append(Row({cat[("iLd", first)]: 1.0}, 0.0, f"CTDV:R3({g.elements[first].name})"))

    # junctions where every incident branch carries an inductor
    if not naive and rp is None:
        singles, _ = _kcl_nodes(topo)
        junction = {b.head for b in topo.branches} | {b.tail for b in topo.branches}
        for node in singles:
            if node not in junction:
                continue
            rule, incident = _node_rule(topo, node, has_path, False)
            if rule != "didt":
                continue
            c = {}
            for b in incident:
                first = next(e for e in b.elements if g.elements[e].kind == "inductor")
                into = 1.0 if b.tail == node else -1.0
                col = cat[("iLd", first)]
                c[col] = c.get(col, 0.0) + into * b.sign_of(first)
            rows.append(Row(c, 0.0, f"CTDV:R2b({g.node_names[node]})"))

    def kvl(e, tag):
        el = g.elements[e]
        c = {cat[("Vsw", e)]: -1.0}
        _v(cat, g, el.p, 1.0, c)
        _v(cat, g, el.n, -1.0, c)
        return Row(c, 0.0, f"{tag} KVL({el.name})")

    for b in topo.branches:
        if not b.switch_count:
            continue
        sws = [e for e in b.elements if g.elements[e].is_switch]
        if status[b.id] is BranchStatus.OFF:
            for e in sws:
                rows.append(kvl(e, "CTDV:S-OFF"))
            if rp is not None:
                for e in sws[1:]:
                    rows.append(
                        Row(
                            {cat[("isw", e)]: float(b.sign_of(e)), cat[("isw", sws[0])]: -float(b.sign_of(sws[0]))},
                            0.0,
                            f"CTDV:Rp-tie({g.elements[e].name})",
                        )
                    )
                continue
            off = [e for e in sws if not cfg[topo.switch_pos[e]]]
            for a, z in zip(off, off[1:]):
                ea, ez = g.elements[a], g.elements[z]
                if b.sign_of(a) == b.sign_of(z):
                    c = {cat[("Vsw", a)]: 1.0, cat[("Vsw", z)]: -1.0}
                    rhs = ea.von - ez.von
                else:
                    c = {cat[("Vsw", a)]: 1.0, cat[("Vsw", z)]: 1.0}
                    rhs = ea.von + ez.von
                rows.append(Row(c, rhs, f"CTDV:S-OFF share({ea.name},{ez.name})"))
            for e in sws:
                if cfg[topo.switch_pos[e]]:
                    rows.append(
                        Row({cat[("isw", e)]: 1.0}, 0.0, f"CTDV:S-OFF open({g.elements[e].name})")
                    )
        elif status[b.id] is BranchStatus.ON:
            for e in sws[1:]:
                rows.append(
                    Row(
                        {cat[("isw", e)]: float(b.sign_of(e)), cat[("isw", sws[0])]: -float(b.sign_of(sws[0]))},
                        0.0,
                        f"CTDV:S-ON tie({g.elements[e].name})",
                    )
                )
            grp = in_group.get(b.id)
            if grp is None or grp[0] == b.id:
                for e in sws:
                    rows.append(kvl(e, "CTDV:S-ON"))
            else:
                rep = topo.branches[grp[0]]
                for e in sws[1:]:
                    rows.append(kvl(e, "CTDV:S-ON"))
                same = 1.0 if rep.head == b.head else -1.0
                rows.append(
                    Row(
                        {cat[("i", b.id)]: 1.0, cat[("i", rep.id)]: -same},
                        0.0,
                        f"CTDV:S-ON parallel(b{b.id},b{rep.id})",
                    )
                )
    return rows


def assemble_full(topo: Topology, cfg: SwitchConfig, naive=False, rp=None) -> LinearSystem:
    """Square system for ``cfg``.

    ``naive`` swaps the inductor rules for unconditional branch ties and plain
    KCL (the formulation that goes singular when an inductor loses its path).
    ``rp`` selects the parallel-resistor formulation.
    """
    if len(cfg) != len(topo.switch_pos):
        raise AssemblyError(
            f"config has {len(cfg)} entries, circuit has {len(topo.switch_pos)} switches/diodes"
        )
    rows = assemble_es(topo, cfg, rp) + assemble_ctdc(topo, cfg, naive, rp) + assemble_ctdv(topo, cfg, naive, rp)
    system = LinearSystem(topo.catalog, rows)
    if len(rows) != system.n:
        used = set()
        for r in rows:
            used.update(r.coeffs)
        missing = [topo.catalog.names[j] for j in range(system.n) if j not in used]
        raise AssemblyError(
            f"{len(rows)} rows for {system.n} unknowns"
            + (f"; unknowns never referenced: {', '.join(missing)}" if missing else "")
            + "; rows: "
            + ", ".join(r.tag for r in rows)
        )
    return system
