"""Mesh-dependent reaction rates and an RDME / Brownian-pair simulation toolkit."""

__version__ = "0.1.0"
