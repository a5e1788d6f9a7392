"""Bilateral cochlear-implant sound coding lab: ACE, Deep ACE and electrodogram metrics."""

__version__ = "0.1.0"
