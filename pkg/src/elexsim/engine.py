"""Explicit transient engine: state update, algebraic solve, switch consistency."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .assembler import Topology, assemble_full, inductor_paths
from .graph import SwitchConfig, build_graph, decompose_branches
from .lu import FactorCache, SingularMatrixError, fast_solve, lu_factor
from .netlist import NetlistDoc, Probe
from .waveform import Waveform

EPS = 1e-9  # diode consistency tolerance, natural units
MAX_BISECT = 40

# Fehlberg 4(5)
RKF_C = (0.0, 1 / 4, 3 / 8, 12 / 13, 1.0, 1 / 2)
RKF_A = (
    (),
    (1 / 4,),
    (3 / 32, 9 / 32),
    (1932 / 2197, -7200 / 2197, 7296 / 2197),
    (439 / 216, -8.0, 3680 / 513, -845 / 4104),
    (-8 / 27, 2.0, -3544 / 2565, 1859 / 4104, -11 / 40),
)
RKF_B4 = (25 / 216, 0.0, 1408 / 2565, 2197 / 4104, -1 / 5, 0.0)
RKF_B5 = (16 / 135, 0.0, 6656 / 12825, 28561 / 56430, -9 / 50, 2 / 55)
SAFETY = 0.9
GROWTH = (0.2, 5.0)


class SimulationError(RuntimeError):
    def __init__(self, message, t=None):
        self.t = t
        super().__init__(message if t is None else f"t={t:.17g}: {message}")


class StepFailure(SimulationError):
    pass


class ConsistencyError(SimulationError):
    pass


@dataclass
class StepOutcome:
    accepted: bool
    h_used: float
    h_next: float
    error_estimate: float
    config_changed: bool
    retries: int


@dataclass
class SimState:
    t: float
    state: np.ndarray
    cfg: SwitchConfig
    last_solution: np.ndarray


@dataclass
class CompiledSystem:
    cfg: SwitchConfig
    system: object
    factors: object = None
    error: Exception | None = None
    b0: np.ndarray = None
    state_rows: np.ndarray = None
    state_idx: np.ndarray = None
    ik_rows: np.ndarray = None
    ik_elems: tuple = ()
    open_inductors: list = field(default_factory=list)  # (iL col, branch col, sign)


def fe_update(state, derivative, h):
    """Forward Euler: V_C += h*i_C/C, I_L += h*V_L/L."""
    return state + h * derivative


class Simulator:
    """Transient simulation of one netlist.

    ``method`` is ``"fe"``, ``"rkf"`` or ``"rp"`` (RKF stepping over the
    parallel-resistor formulation).  ``cache=False`` rebuilds and refactors
    the system at every solve.
    """

    def __init__(self, doc: NetlistDoc, method=None, *, rp=None, cache=True, h=None, tol=None,
                 naive=False, observer=None):
        from .rp import RpConfig

        self.doc = doc
        d = doc.directives
        self.method = method or d.method
        if self.method not in ("fe", "rkf", "rp"):
            raise ValueError(f"unknown method {self.method!r}")
        self.rp = (rp or RpConfig()) if self.method == "rp" else None
        self.naive = naive
        self.observer = observer  # called as observer(t, x, state, cfg) at every recorded point
        self.h = h if h is not None else d.h_init
        self.tol = tol if tol is not None else d.rkf_tol
        self.t_stop = d.t_stop
        self.h_min = min(d.h_min, self.h)
        self.h_max = max(d.h_max, self.h)

        self.graph = build_graph(doc)
        self.branches = decompose_branches(self.graph)
        self.topo = Topology(self.graph, self.branches)
        g = self.graph
        self.switches = g.switch_elements
        self.gated = [k for k, e in enumerate(self.switches) if g.elements[e].kind == "switch"]
        self.diodes = [k for k, e in enumerate(self.switches) if g.elements[e].kind == "diode"]
        self.cache = FactorCache(self._compile, enabled=cache)
        self.n_states = len(self.topo.state_elements)
        self.peak_current = 0.0
        self.n_solves = 0

        cat = self.topo.catalog
        idx, scale = [], []
        for e in self.topo.state_elements:
            el = g.elements[e]
            if el.kind == "capacitor":
                col, s = self.topo.element_current(e)
                idx.append(col)
                scale.append(s / el.value)
            else:
                idx.append(cat[("iLd", e)])
                scale.append(1.0)
        self._deriv_idx = np.array(idx, dtype=int)
        self._deriv_scale = np.array(scale)
        self.ind_states = np.array(
            [k for k, e in enumerate(self.topo.state_elements) if g.elements[e].kind == "inductor"],
            dtype=int,
        )
        self.probes = list(d.outputs) or self.default_probes()
        self._probe_rows = [self._probe_coeffs(p) for p in self.probes]
        self._sw_cols = [(cat[("isw", e)], cat[("Vsw", e)], g.elements[e].von) for e in self.switches]

    # -- setup -------------------------------------------------------------

    def default_probes(self):
        g = self.graph
        probes = [Probe("v", name) for k, name in enumerate(g.node_names) if k != g.ground]
        probes += [Probe("i", el.name) for el in g.elements if el.kind == "inductor"]
        return probes

    def _probe_coeffs(self, probe):
        g, cat, topo = self.graph, self.topo.catalog, self.topo
        if probe.kind == "v":
            node = g.node(probe.target)
            return {} if node == g.ground else {cat[("V", node)]: 1.0}
        el = g.element(probe.target)
        if el.kind != "vdc":
            col, s = topo.element_current(el.index)
            return {col: float(s)}
        # source current p->n through the source = current delivered into p by the rest
        sources = [x for x in g.elements if x.kind == "vdc"]
        for node, sign in ((el.p, 1.0), (el.n, -1.0)):
            if node == g.ground:
                continue
            if sum(node in (x.p, x.n) for x in sources) == 1:
                return {c: sign * v for c, v in topo.kcl_coeffs(node).items()}
        raise ValueError(f"cannot resolve current of {el.name}: both terminals shared with sources")

    def initial_state(self):
        g = self.graph
        return np.array(
            [g.elements[e].ic or 0.0 for e in self.topo.state_elements], dtype=float
        )

    def with_gates(self, cfg: SwitchConfig, t: float) -> SwitchConfig:
        states = list(cfg.states)
        for k in self.gated:
            states[k] = self.graph.elements[self.switches[k]].gate.state(t)
        return SwitchConfig(tuple(states))

    def initial_config(self, t=0.0):
        return self.with_gates(SwitchConfig((False,) * len(self.switches)), t)

    def next_gate_edge(self, t):
        edges = [self.graph.elements[self.switches[k]].gate.next_edge(t) for k in self.gated]
        return min(edges, default=math.inf)

    # -- algebra -----------------------------------------------------------

    def assemble(self, cfg):
        return assemble_full(self.topo, cfg, naive=self.naive, rp=self.rp)

    def _compile(self, cfg):
        system = self.assemble(cfg)
        out = CompiledSystem(cfg, system)
        try:
            out.factors = lu_factor(system.matrix(), key=cfg.states)
        except SingularMatrixError as exc:
            out.error = exc
            return out
        rows = system.rows
        out.b0 = np.array([r.rhs if r.state is None and r.ik is None else 0.0 for r in rows])
        srows = [i for i, r in enumerate(rows) if r.state is not None]
        out.state_rows = np.array(srows, dtype=int)
        out.state_idx = np.array([rows[i].state for i in srows], dtype=int)
        krows = [i for i, r in enumerate(rows) if r.ik is not None]
        out.ik_rows = np.array(krows, dtype=int)
        out.ik_elems = tuple(rows[i].ik for i in krows)
        cat = self.topo.catalog
        # Rp mode gives every inductor a resistive path, so there is no open inductor
        paths = inductor_paths(self.topo, cfg)
        for b in self.branches if self.rp is None else ():
            if b.inductor_count and not paths[b.id]:
                for e in b.elements:
                    if self.graph.elements[e].kind == "inductor":
                        out.open_inductors.append((cat[("iL", e)], cat[("i", b.id)], b.sign_of(e)))
        return out

    def compiled(self, cfg) -> CompiledSystem:
        return self.cache.get(cfg)

    def solve(self, state, cfg) -> np.ndarray:
        """Solve the algebraic system for ``cfg`` at the given state."""
        comp = self.compiled(cfg)
        if comp.error is not None:
            raise comp.error
        b = comp.b0.copy()
        b[comp.state_rows] = state[comp.state_idx]
        self.n_solves += 1
        if self.rp is not None and len(comp.ik_rows):
            from .rp import iterate_cancellation

            return iterate_cancellation(self.topo, comp, b, self.rp)
        return fast_solve(comp.factors, b)

    def derivative(self, x) -> np.ndarray:
        return x[self._deriv_idx] * self._deriv_scale

    def current_tolerance(self):
        return max(EPS, 1e-6 * self.peak_current)

    def inconsistent(self, x, cfg):
        """(diode positions violating their assumed state, open-inductor violation)."""
        bad = []
        for k in self.diodes:
            isw, vsw, von = self._sw_cols[k]
            if cfg[k]:
                if x[isw] < -EPS:
                    bad.append(k)
            elif x[vsw] > von + EPS:
                bad.append(k)
        tol = self.current_tolerance()
        comp = self.compiled(cfg)
        stuck = any(abs(x[il] - s * x[ib]) > tol for il, ib, s in comp.open_inductors)
        return bad, stuck

    def is_consistent(self, state, cfg):
        try:
            x = self.solve(state, cfg)
        except SingularMatrixError:
            return False, None
        bad, stuck = self.inconsistent(x, cfg)
        return (not bad and not stuck), x

    def solve_consistent(self, state, t, cfg_hint):
        """Find a diode configuration consistent with its own solution.

        Gated switches keep their ``cfg_hint`` values.  Inconsistent diodes are
        flipped together; on a revisit the diode states are enumerated in Gray
        code order starting from the hint.
        """
        tried = []
        cfg = cfg_hint
        while cfg not in tried:
            tried.append(cfg)
            try:
                x = self.solve(state, cfg)
            except SingularMatrixError:
                break
            bad, stuck = self.inconsistent(x, cfg)
            if not bad and (not stuck or not self.diodes):
                return x, cfg
            if not bad:
                break
            for k in bad:
                cfg = cfg.replace(k, not cfg[k])
        nd = len(self.diodes)
        for code in range(1 << nd):
            gray = code ^ (code >> 1)
            cand = cfg_hint
            for j, k in enumerate(self.diodes):
                if gray >> j & 1:
                    cand = cand.replace(k, not cfg_hint[k])
            if cand in tried:
                continue
            tried.append(cand)
            ok, x = self.is_consistent(state, cand)
            if ok:
                return x, cand
        raise ConsistencyError(
            "no consistent switch configuration; tried " + ", ".join(c.bitstring for c in tried), t
        )

    # -- stepping ----------------------------------------------------------

    def trial(self, state, x, cfg, h):
        """Advance the state by ``h`` with ``cfg`` frozen; returns (new state, error estimate)."""
        k1 = self.derivative(x)
        if self.method == "fe":
            return fe_update(state, k1, h), 0.0
        ks = [k1]
        for a in RKF_A[1:]:
            y = state + h * sum(c * k for c, k in zip(a, ks))
            ks.append(self.derivative(self.solve(y, cfg)))
        y4 = state + h * sum(c * k for c, k in zip(RKF_B4, ks))
        y5 = state + h * sum(c * k for c, k in zip(RKF_B5, ks))
        sc = self.tol * (1e-3 + np.maximum(np.abs(state), np.abs(y4)))
        err = float(np.max(np.abs(y5 - y4) / sc)) if len(sc) else 0.0
        return y4, err

    def next_step(self, h, err):
        if self.method == "fe":
            return self.h
        factor = GROWTH[1] if err == 0 else SAFETY * err ** -0.2
        factor = min(GROWTH[1], max(GROWTH[0], factor))
        return min(self.h_max, max(self.h_min, h * factor))

    def rkf_step(self, sim: SimState, h: float):
        """Error-controlled trial step from ``sim``; returns (StepOutcome, new state)."""
        retries = 0
        while True:
            new, err = self.trial(sim.state, sim.last_solution, sim.cfg, h)
            if err <= 1.0 or self.method == "fe":
                return StepOutcome(True, h, self.next_step(h, err), err, False, retries), new
            retries += 1
            h_new = h * max(GROWTH[0], SAFETY * err ** -0.2)
            if h_new < self.h_min:
                raise StepFailure(
                    f"step size {h_new:.3g} fell below hmin={self.h_min:.3g} (error {err:.3g})", sim.t
                )
            h = h_new

    def refine_transition(self, sim: SimState, h: float):
        """Bisect ``(0, h]`` for the first point where the frozen config stops being consistent.

        Returns (step, new state) with ``step`` within ``max(1e-12, 1e-6*h)`` of the flip,
        landing just past it.
        """
        eps_t = max(1e-12, 1e-6 * h)
        lo, hi = 0.0, h
        best = None
        for _ in range(MAX_BISECT):
            if hi - lo <= eps_t:
                break
            mid = 0.5 * (lo + hi)
            new, _ = self.trial(sim.state, sim.last_solution, sim.cfg, mid)
            ok, _ = self.is_consistent(new, sim.cfg)
            if ok:
                lo = mid
            else:
                hi, best = mid, new
        if best is None:
            best, _ = self.trial(sim.state, sim.last_solution, sim.cfg, hi)
        return hi, best

    def _record(self, wf, t, x, state, cfg, prev_cfg):
        wf.append(t, [sum(c * x[j] for j, c in row.items()) for row in self._probe_rows], state)
        if self.observer is not None:
            self.observer(t, x, state, cfg)
        if prev_cfg is None or cfg != prev_cfg:
            wf.mark(t, cfg.bitstring)
        if len(self.ind_states):
            self.peak_current = max(self.peak_current, float(np.max(np.abs(state[self.ind_states]))))

    def start(self):
        state = self.initial_state()
        if len(self.ind_states):
            self.peak_current = float(np.max(np.abs(state[self.ind_states])))
        x, cfg = self.solve_consistent(state, 0.0, self.initial_config(0.0))
        return SimState(0.0, state, cfg, x)

    def run(self) -> Waveform:
        wf = Waveform([p.label for p in self.probes], n_states=self.n_states)
        sim = self.start()
        self._record(wf, 0.0, sim.last_solution, sim.state, sim.cfg, None)
        self.stats = {"steps": 0, "rejected": 0, "events": 0, "h_sum": 0.0}
        t_stop = self.t_stop
        tiny = 1e-12 * max(t_stop, self.h)

        if self.n_states == 0:
            t = sim.t
            while True:
                t = self.next_gate_edge(t)
                if t > t_stop + tiny:
                    break
                x, cfg = self.solve_consistent(sim.state, t, self.with_gates(sim.cfg, t))
                self._record(wf, t, x, sim.state, cfg, sim.cfg)
                sim = SimState(t, sim.state, cfg, x)
            return wf

        h = min(self.h, self.h_max)
        while sim.t < t_stop - tiny:
            t_edge = self.next_gate_edge(sim.t)
            limit = min(t_stop, t_edge)
            h_try = min(h, limit - sim.t)
            if limit - (sim.t + h_try) < 1e-9 * h_try:
                h_try = limit - sim.t
            outcome, new = self.rkf_step(sim, h_try)
            self.stats["rejected"] += outcome.retries
            h_used = outcome.h_used
            t_new = sim.t + h_used
            if h_used == limit - sim.t:
                t_new = limit
            ok, _ = self.is_consistent(new, sim.cfg)
            if not ok:
                h_used, new = self.refine_transition(sim, h_used)
                t_new = sim.t + h_used
                self.stats["events"] += 1
            x, cfg = self.solve_consistent(new, t_new, self.with_gates(sim.cfg, t_new))
            self.stats["steps"] += 1
            self.stats["h_sum"] += h_used
            self._record(wf, t_new, x, new, cfg, sim.cfg)
            sim = SimState(t_new, new, cfg, x)
            h = outcome.h_next if h_used == outcome.h_used else max(self.h_min, outcome.h_next)
        return wf

    @property
    def mean_step(self):
        s = getattr(self, "stats", None)
        if not s or not s["steps"]:
            return float("nan")
        return s["h_sum"] / s["steps"]


def simulate(doc: NetlistDoc, method=None, **kwargs) -> Waveform:
    return Simulator(doc, method, **kwargs).run()


def enumerate_configs(n):
    for bits in itertools.product((False, True), repeat=n):
        yield SwitchConfig(bits)
