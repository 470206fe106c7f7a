"""Chaos expansions for marked point processes: martingale measures, iterated
integrals, least-squares chaos projection and exact oracles."""

__version__ = "0.1.0"
