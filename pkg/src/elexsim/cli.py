"""``elex-sim`` command line front end."""

from __future__ import annotations

import argparse
import sys
import time

import numpy as np

from .assembler import Topology, assemble_full
from .engine import SimulationError, Simulator
from .graph import SwitchConfig, TopologyError, build_graph, decompose_branches, dump_topology
from .lu import SingularMatrixError, lu_factor
from .netlist import Diagnostic, NetlistError, PulseGate, parse_netlist, validate
from .oracle import OracleConfig, OracleError, be_simulate
from .rp import NoConvergence, RpConfig
from .waveform import Waveform, WaveformError, compare_waveforms, periodic_change, to_svg

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_SIM = 2


def _err(msg):
    print(f"error: {msg}", file=sys.stderr)


def load_netlist(path):
    """Parse and validate; returns the document or raises NetlistError."""
    with open(path, "rb") as fh:
        doc = parse_netlist(fh.read())
    problems = validate(doc)
    if problems:
        raise NetlistError([Diagnostic(0, 0, p) for p in problems])
    return doc


def parse_config(text, graph) -> SwitchConfig:
    """Accepts a bitstring (``"01"``) or ``NAME=on|off`` pairs; unnamed switches stay off."""
    names = [graph.elements[e].name for e in graph.switch_elements]
    text = text.strip()
    if "=" not in text:
        if len(text) != len(names) or set(text) - {"0", "1"}:
            raise ValueError(f"config bitstring must have {len(names)} digits of 0/1 ({','.join(names)})")
        return SwitchConfig.from_bitstring(text)
    states = dict.fromkeys(names, False)
    for part in text.split(","):
        name, _, val = part.partition("=")
        name, val = name.strip(), val.strip().lower()
        if name not in states:
            raise ValueError(f"unknown switch {name!r}")
        if val not in ("on", "off", "1", "0"):
            raise ValueError(f"bad state {val!r} for {name}")
        states[name] = val in ("on", "1")
    return SwitchConfig(tuple(states[n] for n in names))


def _pulse_period(doc):
    periods = {el.gate.period for el in doc.elements if isinstance(el.gate, PulseGate)}
    return periods.pop() if len(periods) == 1 else None


def _figures(sim, wf, wall):
    out = {
        "points": len(wf),
        "steps": sim.stats["steps"],
        "rejected": sim.stats["rejected"],
        "events": sim.stats["events"],
        "mean_h": f"{sim.mean_step:.6g}",
        "lu_builds": sim.cache.builds,
        "wall_s": f"{wall:.3f}",
    }
    period = _pulse_period(sim.doc)
    if period and sim.n_states and len(wf) > 1:
        pc = periodic_change(wf, period)
        if len(pc):
            last = float(np.max(pc[-1]))
            out["periods"] = len(pc)
            out["periodic_change_last"] = f"{last:.3g}"
            out["steady_state"] = "yes" if last < 1e-3 else "no"
    return out


def cmd_run(args) -> int:
    try:
        doc = load_netlist(args.netlist)
    except (OSError, NetlistError) as exc:
        _err(exc)
        return EXIT_INPUT
    rp = None
    if args.method == "rp" or args.rp is not None or args.rp_kmax is not None:
        kw = {}
        if args.rp is not None:
            kw.update(r_p_inductor=args.rp, r_p_switch=args.rp)
        if args.rp_kmax is not None:
            kw["k_max"] = args.rp_kmax
        try:
            rp = RpConfig(**kw)
        except ValueError as exc:
            _err(exc)
            return EXIT_INPUT
    try:
        sim = Simulator(doc, args.method, rp=rp, cache=not args.no_cache, h=args.h, tol=args.tol)
    except TopologyError as exc:
        _err(exc)
        return EXIT_INPUT
    if args.dump_topology or args.dump_system:
        cfg = sim.initial_config(0.0)
        if args.dump_topology:
            print(dump_topology(sim.graph, sim.branches, cfg))
        if args.dump_system:
            print(sim.assemble(cfg).dump())
    t0 = time.perf_counter()
    try:
        wf = sim.run()
    except NoConvergence as exc:
        _err(f"{exc}")
        return EXIT_SIM
    except SimulationError as exc:
        _err(f"{exc} (t={exc.t!r})")
        return EXIT_SIM
    wall = time.perf_counter() - t0
    try:
        if args.out:
            wf.write_csv(args.out)
        else:
            sys.stdout.write(wf.to_csv())
        if args.plot:
            with open(args.plot, "w", encoding="utf-8") as fh:
                fh.write(to_svg(wf))
    except OSError as exc:
        _err(exc)
        return EXIT_INPUT
    stream = sys.stdout if args.out else sys.stderr
    for k, v in _figures(sim, wf, wall).items():
        print(f"{k}={v}", file=stream)
    return EXIT_OK


def cmd_check(args) -> int:
    try:
        doc = load_netlist(args.netlist)
    except (OSError, NetlistError) as exc:
        _err(exc)
        return EXIT_INPUT
    try:
        g = build_graph(doc)
        branches = decompose_branches(g)
        topo = Topology(g, branches)
    except TopologyError as exc:
        print(f"unsupported topology: {exc}")
        return EXIT_INPUT
    try:
        cfg = parse_config(args.config, g) if args.config else SwitchConfig((False,) * len(g.switch_elements))
    except ValueError as exc:
        _err(exc)
        return EXIT_INPUT
    print(dump_topology(g, branches, cfg))
    system = assemble_full(topo, cfg, naive=args.naive)
    print(f"variables={len(topo.catalog.keys)} rows={len(system.rows)}")
    print(system.dump())
    try:
        lu_factor(system.matrix())
        print("factorization=ok")
    except SingularMatrixError as exc:
        print(f"factorization=singular step={exc.step}")
    return EXIT_OK


def cmd_compare(args) -> int:
    try:
        a = Waveform.read_csv(args.a)
        b = Waveform.read_csv(args.b)
        report = compare_waveforms(a, b)
    except (OSError, WaveformError) as exc:
        _err(exc)
        return EXIT_INPUT
    worst = 0.0
    for label, r in report.items():
        print(f"{label} max_abs={r['max_abs']:.6g} rel_l2={r['rel_l2']:.6g}")
        worst = max(worst, r["rel_l2"])
    ok = worst <= args.rtol
    print(f"result={'pass' if ok else 'fail'}")
    return EXIT_OK if ok else EXIT_SIM


def cmd_plot(args) -> int:
    try:
        wf = Waveform.read_csv(args.csv)
        svg = to_svg(wf)
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(svg)
    except (OSError, WaveformError) as exc:
        _err(exc)
        return EXIT_INPUT
    return EXIT_OK


def cmd_oracle(args) -> int:
    try:
        doc = load_netlist(args.netlist)
        cfg = OracleConfig(r_on=args.r_on, r_off=args.r_off, h_fixed=args.h)
    except (OSError, NetlistError, ValueError) as exc:
        _err(exc)
        return EXIT_INPUT
    try:
        wf = be_simulate(doc, cfg)
    except (OracleError, np.linalg.LinAlgError) as exc:
        _err(exc)
        return EXIT_SIM
    try:
        if args.out:
            wf.write_csv(args.out)
        else:
            sys.stdout.write(wf.to_csv())
    except OSError as exc:
        _err(exc)
        return EXIT_INPUT
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="elex-sim", description="Explicit transient simulation of ideal-switch circuits.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate a netlist")
    r.add_argument("netlist")
    r.add_argument("--method", choices=("fe", "rkf", "rp"))
    r.add_argument("--h", type=float, help="initial (FE: fixed) step")
    r.add_argument("--tol", type=float, help="RKF tolerance")
    r.add_argument("--rp", type=float, help="parallel resistance in ohms")
    r.add_argument("--rp-kmax", type=int)
    r.add_argument("--out", help="CSV path (default stdout)")
    r.add_argument("--plot", help="SVG path")
    r.add_argument("--no-cache", action="store_true", help="refactor at every solve")
    r.add_argument("--dump-topology", action="store_true")
    r.add_argument("--dump-system", action="store_true")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("check", help="print topology and equations for one configuration")
    c.add_argument("netlist")
    c.add_argument("--config", help="bitstring or NAME=on,NAME=off")
    c.add_argument("--naive", action="store_true", help="skip the configuration-dependent rows")
    c.set_defaults(func=cmd_check)

    m = sub.add_parser("compare", help="compare two waveform CSVs")
    m.add_argument("a")
    m.add_argument("b")
    m.add_argument("--rtol", type=float, default=1e-2)
    m.set_defaults(func=cmd_compare)

    pl = sub.add_parser("plot", help="render a waveform CSV as SVG")
    pl.add_argument("csv")
    pl.add_argument("--out", required=True)
    pl.set_defaults(func=cmd_plot)

    o = sub.add_parser("oracle", help="backward-Euler reference run")
    o.add_argument("netlist")
    o.add_argument("--h", type=float, default=1e-9)
    o.add_argument("--r-on", type=float, default=1e-3)
    o.add_argument("--r-off", type=float, default=1e9)
    o.add_argument("--out")
    o.set_defaults(func=cmd_oracle)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
