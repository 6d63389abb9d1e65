"""Passivity toolkit for hybrid-angle-controlled grid-forming inverters."""

__version__ = "0.1.0"
