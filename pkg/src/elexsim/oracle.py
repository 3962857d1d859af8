"""Reference solutions used to check the explicit engine.

``be_simulate`` is a fixed-step backward-Euler simulator over plain modified
nodal analysis, with switches and diodes as two-valued resistors.  It shares
only the netlist parser with the engine.  For a fixed switch configuration a
BE step is affine in the state, so each configuration is reduced once to
``x = M s + c`` and the time loop runs compiled.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numba
import numpy as np

from .netlist import EventGate, NetlistDoc, Probe, PulseGate
from .waveform import Waveform


class OracleError(RuntimeError):
    pass


@dataclass(frozen=True)
class OracleConfig:
    r_on: float = 1e-3
    r_off: float = 1e9
    h_fixed: float = 1e-9
    max_points: int = 200_000

    def __post_init__(self):
        if not 0 < self.r_on < self.r_off:
            raise ValueError("need 0 < r_on < r_off")
        if not self.h_fixed > 0:
            raise ValueError("h_fixed must be positive")


def analytic_rl(V, R, L, t):
    """Current of a series RL circuit switched onto ``V`` at t=0."""
    if not (V > 0 and R > 0 and L > 0):
        raise ValueError("V, R, L must be positive")
    return (V / R) * (1.0 - np.exp(-np.asarray(t, dtype=float) * R / L))


def analytic_rc(V, R, C, t):
    """Capacitor voltage of a series RC circuit switched onto ``V`` at t=0."""
    return V * (1.0 - np.exp(-np.asarray(t, dtype=float) / (R * C)))


def gate_states(gate, times):
    """Vectorized gate evaluation, same edge convention as the engine."""
    times = np.asarray(times, dtype=float)
    if isinstance(gate, PulseGate):
        pos = (times - gate.delay) / gate.period
        k = np.floor(pos + 1e-9)
        on = (pos - k) < gate.duty - 1e-9
        return on & (times >= gate.delay - 1e-9 * gate.period)
    if isinstance(gate, EventGate):
        if not gate.events:
            return np.zeros(times.shape, dtype=bool)
        et = np.array([e[0] for e in gate.events])
        ev = np.array([e[1] for e in gate.events], dtype=bool)
        idx = np.searchsorted(et, times + 1e-15 + 1e-12 * np.abs(times), side="right") - 1
        return np.where(idx >= 0, ev[np.maximum(idx, 0)], False)
    raise TypeError(f"unknown gate {gate!r}")


class _Mna:
    def __init__(self, doc: NetlistDoc, cfg: OracleConfig):
        self.doc = doc
        self.cfg = cfg
        names = doc.node_names
        self.node = {n: k for k, n in enumerate(n for n in names if n != "0")}
        self.nv = len(self.node)
        self.extra = {}
        for el in doc.elements:
            if el.kind in ("vdc", "inductor"):
                self.extra[el.name] = self.nv + len(self.extra)
        self.n = self.nv + len(self.extra)
        self.caps = [el for el in doc.elements if el.kind == "capacitor"]
        self.inds = [el for el in doc.elements if el.kind == "inductor"]
        self.switches = [el for el in doc.elements if el.kind in ("switch", "diode")]
        self.ns = len(self.caps) + len(self.inds)

    def _idx(self, name):
        return self.node.get(name)

    def _stamp_g(self, G, p, n, g):
        a, b = self._idx(p), self._idx(n)
        if a is not None:
            G[a, a] += g
        if b is not None:
            G[b, b] += g
        if a is not None and b is not None:
            G[a, b] -= g
            G[b, a] -= g

    def _inject(self, vec, p, n, value):
        a, b = self._idx(p), self._idx(n)
        if a is not None:
            vec[a] += value
        if b is not None:
            vec[b] -= value

    def affine(self, on_bits):
        """(M, c) with x = M @ state + c for one switch configuration."""
        h = self.cfg.h_fixed
        G = np.zeros((self.n, self.n))
        e = np.zeros(self.n)
        B = np.zeros((self.n, self.ns))
        for el in self.doc.elements:
            if el.kind == "resistor":
                self._stamp_g(G, el.p, el.n, 1.0 / el.value)
            elif el.kind == "capacitor":
                gc = el.value / h
                self._stamp_g(G, el.p, el.n, gc)
                col = np.zeros(self.n)
                self._inject(col, el.p, el.n, gc)
                B[:, self.caps.index(el)] = col
            elif el.kind in ("vdc", "inductor"):
                j = self.extra[el.name]
                a, b = self._idx(el.p), self._idx(el.n)
                if a is not None:
                    G[a, j] += 1.0
                    G[j, a] += 1.0
                if b is not None:
                    G[b, j] -= 1.0
                    G[j, b] -= 1.0
                if el.kind == "vdc":
                    e[j] = el.value
                else:
                    G[j, j] -= el.value / h
                    B[j, len(self.caps) + self.inds.index(el)] = -el.value / h
        for el, on in zip(self.switches, on_bits):
            r = self.cfg.r_on if on else self.cfg.r_off
            self._stamp_g(G, el.p, el.n, 1.0 / r)
            if on and el.von:
                self._inject(e, el.p, el.n, el.von / r)
        M = np.linalg.solve(G, B)
        c = np.linalg.solve(G, e)
        return M, c

    def voltage_row(self, p, n):
        row = np.zeros(self.n)
        if self._idx(p) is not None:
            row[self._idx(p)] += 1.0
        if self._idx(n) is not None:
            row[self._idx(n)] -= 1.0
        return row

    def probe_row(self, probe: Probe):
        if probe.kind == "v":
            return self.voltage_row(probe.target, "0")
        el = self.doc.element(probe.target)
        row = np.zeros(self.n)
        if el.kind in ("vdc", "inductor"):
            row[self.extra[el.name]] = 1.0
            return row
        return None  # resistive elements need conductance, handled by caller

    def state_rows(self):
        rows = [self.voltage_row(el.p, el.n) for el in self.caps]
        for el in self.inds:
            row = np.zeros(self.n)
            row[self.extra[el.name]] = 1.0
            rows.append(row)
        return np.array(rows).reshape(self.ns, self.n)


@numba.njit(cache=True)
def _be_loop(S, sc, D, dc, P, pc, von, dpos, gate_idx, s0, d0, rec_every, max_flips):
    nsteps = gate_idx.shape[0]
    nrec = nsteps // rec_every
    out = np.empty((nrec, P.shape[1]))
    states = np.empty((nrec, S.shape[1]))
    dmask_out = np.empty(nrec, dtype=np.int64)
    s = s0.copy()
    dmask = d0
    nd = dpos.shape[0]
    r = 0
    for step in range(nsteps):
        flips = 0
        while True:
            idx = gate_idx[step] | dmask
            flip = 0
            for k in range(nd):
                vd = dc[idx, k]
                for j in range(s.shape[0]):
                    vd += D[idx, k, j] * s[j]
                on = (dmask >> dpos[k]) & 1
                if on == 1 and vd < von[k]:
                    flip |= 1 << dpos[k]
                elif on == 0 and vd > von[k]:
                    flip |= 1 << dpos[k]
            if flip == 0:
                break
            dmask ^= flip
            flips += 1
            if flips > max_flips:
                return out[:0], states[:0], dmask_out[:0], step
        if (step + 1) % rec_every == 0:
            for k in range(P.shape[1]):
                v = pc[idx, k]
                for j in range(s.shape[0]):
                    v += P[idx, k, j] * s[j]
                out[r, k] = v
        new = np.empty_like(s)
        for i in range(s.shape[0]):
            v = sc[idx, i]
            for j in range(s.shape[0]):
                v += S[idx, i, j] * s[j]
            new[i] = v
        s = new
        if (step + 1) % rec_every == 0:
            states[r] = s
            dmask_out[r] = idx
            r += 1
    return out, states, dmask_out, -1


def be_simulate(doc: NetlistDoc, cfg: OracleConfig | None = None, t_stop=None, probes=None) -> Waveform:
    """Fixed-step backward-Euler waveform; samples start at t = h_fixed."""
    cfg = cfg or OracleConfig()
    mna = _Mna(doc, cfg)
    t_stop = doc.directives.t_stop if t_stop is None else t_stop
    h = cfg.h_fixed
    nsteps = int(round(t_stop / h))
    if nsteps < 1:
        raise OracleError("t_stop shorter than one oracle step")
    if abs(nsteps * h - t_stop) > 1e-6 * h:
        raise OracleError("t_stop must be a whole number of oracle steps")
    rec_every = max(1, int(math.ceil(nsteps / cfg.max_points)))

    probes = list(probes or doc.directives.outputs)
    if not probes:
        probes = [Probe("v", n) for n in doc.node_names if n != "0"]
        probes += [Probe("i", el.name) for el in mna.inds]

    nsw = len(mna.switches)
    ncfg = 1 << nsw
    srow = mna.state_rows()
    prow = []
    for p in probes:
        row = mna.probe_row(p)
        if row is None:
            el = doc.element(p.target)
            prow.append(("el", el))
        else:
            prow.append(("row", row))
    diodes = [k for k, el in enumerate(mna.switches) if el.kind == "diode"]

    S = np.zeros((ncfg, mna.ns, mna.ns))
    sc = np.zeros((ncfg, mna.ns))
    D = np.zeros((ncfg, len(diodes), mna.ns))
    dc = np.zeros((ncfg, len(diodes)))
    P = np.zeros((ncfg, len(probes), mna.ns))
    pc = np.zeros((ncfg, len(probes)))
    for idx, bits in enumerate(itertools.product((0, 1), repeat=nsw)):
        on = bits[::-1]  # bit k of idx is switch k
        M, c = mna.affine(on)
        S[idx] = srow @ M
        sc[idx] = srow @ c
        for k, pos in enumerate(diodes):
            el = mna.switches[pos]
            vr = mna.voltage_row(el.p, el.n)
            D[idx, k] = vr @ M
            dc[idx, k] = vr @ c
        for k, (kind, item) in enumerate(prow):
            if kind == "row":
                row = item
            else:
                el = item
                vr = mna.voltage_row(el.p, el.n)
                if el.kind == "resistor":
                    row = vr / el.value
                elif el.kind == "capacitor":
                    # BE capacitor current (C/h)(v_new - v_old); v_old enters through the state
                    row = vr * (el.value / h)
                else:
                    j = mna.switches.index(el)
                    row = vr / (cfg.r_on if on[j] else cfg.r_off)
            P[idx, k] = row @ M
            pc[idx, k] = row @ c
            if kind == "el":
                if el.kind == "capacitor":
                    P[idx, k, mna.caps.index(el)] -= el.value / h
                elif el.kind in ("switch", "diode") and on[mna.switches.index(el)] and el.von:
                    pc[idx, k] -= el.von / cfg.r_on

    times = (np.arange(1, nsteps + 1)) * h
    gate_idx = np.zeros(nsteps, dtype=np.int64)
    for k, el in enumerate(mna.switches):
        if el.kind == "switch":
            gate_idx |= gate_states(el.gate, times).astype(np.int64) << k
    s0 = np.array([el.ic or 0.0 for el in mna.caps + mna.inds], dtype=float)
    dpos = np.array(diodes, dtype=np.int64)
    von = np.array([mna.switches[k].von for k in diodes], dtype=float)
    out, states, masks, failed = _be_loop(S, sc, D, dc, P, pc, von, dpos, gate_idx, s0, 0, rec_every, 100)
    if failed >= 0:
        raise OracleError(f"diode states did not settle at t={times[failed]:.6g}")

    wf = Waveform([p.label for p in probes], n_states=mna.ns)
    rec_t = times[rec_every - 1::rec_every][: len(out)]
    wf._t = rec_t.tolist()
    wf._rows = out.tolist()
    wf._states = list(states)
    prev = None
    for t, m in zip(rec_t, masks):
        if m != prev:
            wf.mark(t, "".join("1" if m >> k & 1 else "0" for k in range(nsw)))
            prev = m
    return wf
