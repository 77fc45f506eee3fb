"""Obliviously differentially private statistics over a simulated two-tier memory.

Submodules: ``extmem`` (traced external memory), ``noise``, ``oprim``
(sorting network, shuffle, linear-scan ORAM), ``sketches``, ``queries``,
``budget``, ``verify`` and the ``cli``.
"""

__version__ = "0.1.0"
