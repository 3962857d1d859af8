import numpy as np
import pytest

from elexsim import fixtures
from elexsim.assembler import Topology, assemble_full
from elexsim.engine import Simulator, enumerate_configs
from elexsim.graph import SwitchConfig, build_graph, decompose_branches
from elexsim.lu import SingularMatrixError, lu_factor
from elexsim.netlist import parse_netlist
from elexsim.rp import NoConvergence, RpConfig, RpSolver, attach_rp

SERIES = "Vdc A 0 10\nS1 A B von=0 events()\nS2 B C von=0 events()\nR C 0 {R!r}\n.tran 1u 1u\n"


def _topo(doc):
    g = build_graph(doc)
    return Topology(g, decompose_branches(g))


def _v(topo, x, node):
    return x[topo.catalog[("V", topo.graph.node(node))]]


class TestConfig:
    def test_defaults(self):
        rp = RpConfig()
        assert rp.r_p_inductor == rp.r_p_switch == 1e6 and rp.k_max == 20

    @pytest.mark.parametrize("kw", [dict(r_p_switch=0), dict(r_p_inductor=-1), dict(k_max=1), dict(max_iter=0)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            RpConfig(**kw)


class TestAttach:
    def test_series_switch_rows(self):
        topo = _topo(fixtures.load("fig6"))
        rows = attach_rp(topo, SwitchConfig.from_bitstring("00"), RpConfig()).dump().splitlines()
        assert "ES:S1:Rp i_sw(S1) - 1e-06*V_sw(S1) = -I_k(S1)" in rows
        assert "ES:S2:Rp i_sw(S2) - 1e-06*V_sw(S2) = -I_k(S2)" in rows
        assert "ES:R -0.001*V(C) + i(b1) = 0" in rows

    def test_on_switches_untouched(self):
        topo = _topo(fixtures.load("fig6"))
        cfg = SwitchConfig.from_bitstring("11")
        assert attach_rp(topo, cfg, RpConfig()).dump() == assemble_full(topo, cfg).dump()

    def test_inductor_gets_parallel_conductance(self):
        topo = _topo(fixtures.load("rl"))
        rows = attach_rp(topo, SwitchConfig(()), RpConfig(r_p_inductor=2e5)).dump()
        assert "5e-06" in rows

    @pytest.mark.xfail(strict=True, raises=SingularMatrixError,
                       reason="boost S on + D on shorts C through ideal on-switches; Rp leaves on-switches untouched")
    def test_nonsingular_all_configs(self):
        for name in fixtures.NAMES:
            topo = _topo(fixtures.load(name))
            for cfg in enumerate_configs(len(topo.graph.switch_elements)):
                lu_factor(attach_rp(topo, cfg, RpConfig()).matrix())

    def test_nonsingular_except_shorted_capacitor(self):
        singular = []
        for name in fixtures.NAMES:
            topo = _topo(fixtures.load(name))
            for cfg in enumerate_configs(len(topo.graph.switch_elements)):
                try:
                    lu_factor(attach_rp(topo, cfg, RpConfig()).matrix())
                except SingularMatrixError:
                    singular.append((name, cfg.bitstring))
        assert singular == [("boost", "11")]


class TestIteration:
    def test_divider(self):
        topo = _topo(fixtures.load("fig6"))
        x = RpSolver(topo).solve(SwitchConfig.from_bitstring("00"))
        assert _v(topo, x, "B") == pytest.approx(5.0, abs=1e-8)
        i = x[topo.catalog[("i", 1)]]
        assert abs(i) <= 1e-9 * 10 / 1e6

    def test_first_iterate_is_plain_resistive(self):
        topo = _topo(fixtures.load("fig6"))
        with pytest.raises(NoConvergence) as info:
            RpSolver(topo, RpConfig(max_iter=1)).solve(SwitchConfig.from_bitstring("00"))
        x1 = info.value.history[0]
        assert _v(topo, x1, "B") == pytest.approx(10 * (1e6 + 1e3) / (2e6 + 1e3), rel=1e-12)

    def test_adversarial_no_convergence(self):
        topo = _topo(parse_netlist(SERIES.format(R=1e9)))
        with pytest.raises(NoConvergence) as info:
            RpSolver(topo, RpConfig(1e3, 1e3)).solve(SwitchConfig.from_bitstring("00"))
        assert len(info.value.history) == 200
        assert abs(_v(topo, info.value.history[-1], "B") - 5.0) > 1.0

    def test_converges_when_load_small(self):
        topo = _topo(parse_netlist(SERIES.format(R=1e3)))
        x = RpSolver(topo, RpConfig(1e3, 1e3)).solve(SwitchConfig.from_bitstring("00"))
        assert _v(topo, x, "B") == pytest.approx(5.0, abs=1e-7)


class TestAgreement:
    def test_fig6_all_configs(self):
        doc = fixtures.load("fig6")
        cta = Simulator(doc)
        topo = cta.topo
        solver = RpSolver(topo)
        for cfg in enumerate_configs(2):
            a = cta.solve(np.zeros(0), cfg)
            b = solver.solve(cfg)
            for node in "ABC":
                assert _v(topo, b, node) == pytest.approx(_v(topo, a, node), rel=1e-6, abs=1e-6 * 10)

    @pytest.mark.parametrize("bits, state", [("00", [25.0, 0.0]), ("01", [25.0, 3.0]), ("10", [25.0, 3.0])])
    def test_boost(self, bits, state):
        cta = Simulator(fixtures.load("boost"))
        topo = cta.topo
        cfg = SwitchConfig.from_bitstring(bits)
        a = cta.solve(np.array(state), cfg)
        b = RpSolver(topo).solve(cfg, np.array(state))
        for node in "123":
            assert _v(topo, b, node) == pytest.approx(_v(topo, a, node), rel=1e-6, abs=1e-6 * 10)

    def test_engine_rp_method(self):
        wf = Simulator(fixtures.load("fig6"), "rp").run()
        assert wf["v(B)"][0] == pytest.approx(5.0, abs=1e-8)
