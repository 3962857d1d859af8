import numpy as np
import pytest

from elexsim import fixtures
from elexsim.engine import Simulator


@pytest.fixture
def load():
    return fixtures.load


def kcl_residuals(sim: Simulator, x):
    """Current balance at every node not touched by a voltage source.

    Switches use their own ``i_sw`` variable and other elements the branch
    current, so the check does not rely on the KCL rows the assembler wrote.
    """
    g, topo, cat = sim.graph, sim.topo, sim.topo.catalog
    net = np.zeros(len(g.node_names))
    scale = 0.0
    for el in g.elements:
        if el.kind == "vdc":
            continue
        if el.is_switch:
            i = x[cat[("isw", el.index)]]
        else:
            col, s = topo.element_current(el.index)
            i = s * x[col]
        net[el.p] -= i
        net[el.n] += i
        scale = max(scale, abs(i))
    skip = {g.ground} | {n for el in g.elements if el.kind == "vdc" for n in (el.p, el.n)}
    return np.array([net[k] for k in range(len(net)) if k not in skip]), scale
