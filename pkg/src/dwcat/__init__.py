"""Counterdiabatic preparation of double-well cat states of a Duffing resonator."""

__version__ = "0.1.0"
