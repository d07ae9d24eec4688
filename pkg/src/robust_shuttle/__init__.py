"""Robust control pulse design for electron shuttling along a three-donor chain.

The package optimises Fourier-parametrised tunnelling pulses so that an
electron placed on the left donor ends up on the right donor for every
detuning in an uncertainty interval.
"""

__version__ = "0.1.0"

HBAR_MEV_NS = 6.582119569e-4
"""Reduced Planck constant in meV * ns."""
