"""Unit conventions.

All frequencies quoted in MHz are stored internally as angular frequencies
in rad/ns (omega = 2*pi*f_MHz*1e-3); time is in ns. Scenario files state
their units explicitly so the convention is visible in every input.
"""

import math

RAD_PER_NS_PER_MHZ = 2.0 * math.pi * 1e-3


def from_mhz(f_mhz: float) -> float:
    """Ordinary frequency in MHz to angular frequency in rad/ns."""
    return RAD_PER_NS_PER_MHZ * f_mhz


def to_mhz(omega: float) -> float:
    """Angular frequency in rad/ns back to ordinary frequency in MHz."""
    return omega / RAD_PER_NS_PER_MHZ
