"""Bundled example netlists."""

from importlib import resources

from ..netlist import NetlistDoc, parse_netlist

NAMES = ("boost", "fig4", "fig5", "fig6", "fig8", "rl")


def path(name: str):
    return resources.files(__name__).joinpath(f"{name}.cir")


def text(name: str) -> str:
    return path(name).read_text(encoding="utf-8")


def load(name: str) -> NetlistDoc:
    return parse_netlist(text(name))
