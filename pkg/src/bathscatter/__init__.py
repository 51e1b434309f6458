"""Scattering of light by a quantum emitter embedded in a structured dielectric bath.

Modules:
    media: grids, PML settings and permittivity maps.
    fdfd: frequency-domain Helmholtz solver, far fields and the field cache.
    emitter: bath spectral fits and the emitter response in time and frequency.
    smatrix: single- and multi-photon scattering amplitudes and cross sections.
    twophoton: two-photon output state and its Schmidt modes.
    markovian: Markovian correlation functions of small level systems.
    cli: configuration-driven runs with cached sweeps.
"""

__version__ = "0.1.0"
