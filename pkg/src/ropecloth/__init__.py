"""Rope-chain cloth dynamics with analytic SDF collisions and neural mesh reconstruction."""

__version__ = "0.1.0"
