"""Parallel-resistor fallback.

Inductors get a plain parallel conductance.  Each off switch becomes a
conductance ``G_p`` with a current source ``I_k`` that is ramped towards
``G_p * V_sw`` over successive solves, so the matrix stays constant while
the switch current is driven to zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assembler import LinearSystem, Topology, assemble_full
from .lu import fast_solve, lu_factor, lu_solve


class NoConvergence(ArithmeticError):
    def __init__(self, message, history):
        self.history = history
        super().__init__(message)


@dataclass(frozen=True)
class RpConfig:
    r_p_inductor: float = 1e6
    r_p_switch: float = 1e6
    k_max: int = 20
    max_iter: int = 200

    def __post_init__(self):
        if not (self.r_p_inductor > 0 and self.r_p_switch > 0):
            raise ValueError("parallel resistances must be positive")
        if self.k_max < 2:
            raise ValueError("k_max must be >= 2")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


def attach_rp(topo: Topology, cfg, rp: RpConfig) -> LinearSystem:
    """System with parallel resistors on inductors and conductance + source on off switches."""
    return assemble_full(topo, cfg, rp=rp)


@dataclass
class _Compiled:
    factors: object
    b0: np.ndarray
    ik_rows: np.ndarray
    ik_elems: tuple


def iterate_cancellation(topo: Topology, comp, b, rp: RpConfig, v_scale=None):
    """Ramp the cancelling currents until node voltages stop moving.

    ``comp`` carries the factors and the rows
    holding ``-I_k``; ``b`` is the right-hand side with ``I_k = 0``.
    Iteration ``k`` uses weight ``min(1, (k-1)/(k_max-1))``; convergence is
    only declared once the weight has reached 1.
    """
    cat = topo.catalog
    g = topo.graph
    if v_scale is None:
        v_scale = max([abs(el.value) for el in g.elements if el.kind == "vdc"] or [1.0])
    vcols = np.array([j for j, key in enumerate(cat.keys) if key[0] in ("V", "Vsw")], dtype=int)
    vsw = np.array([cat[("Vsw", e)] for e in comp.ik_elems], dtype=int)
    gp = 1.0 / rp.r_p_switch
    tol = 1e-9 * v_scale

    history = []
    x_prev = None
    for k in range(1, rp.max_iter + 1):
        w = min(1.0, (k - 1) / (rp.k_max - 1))
        bk = b.copy()
        if x_prev is not None:
            bk[comp.ik_rows] = -w * gp * x_prev[vsw]
        x = fast_solve(comp.factors, bk)
        history.append(x)
        if x_prev is not None and w >= 1.0:
            if float(np.max(np.abs(x[vcols] - x_prev[vcols]))) < tol:
                return x
        x_prev = x
    raise NoConvergence(
        f"parallel-resistor iteration did not converge in {rp.max_iter} iterations", history
    )


class RpSolver:
    """Stand-alone algebraic solve with the parallel-resistor formulation."""

    def __init__(self, topo: Topology, rp: RpConfig | None = None):
        self.topo = topo
        self.rp = rp or RpConfig()

    def system(self, cfg):
        return attach_rp(self.topo, cfg, self.rp)

    def solve(self, cfg, state=None):
        system = self.system(cfg)
        factors = lu_factor(system.matrix())
        b = system.rhs(state if state is not None else np.zeros(len(self.topo.state_elements)))
        rows = [i for i, r in enumerate(system.rows) if r.ik is not None]
        comp = _Compiled(factors, b, np.array(rows, dtype=int), tuple(system.rows[i].ik for i in rows))
        if not rows:
            return lu_solve(factors, b)
        return iterate_cancellation(self.topo, comp, b, self.rp)
