"""Subsurface phase design for RIS-assisted multi-user uplinks.

Modules: :mod:`specfun` (special functions and Ricean pair moments),
:mod:`channel` (geometry and correlated Ricean channels), :mod:`phase`
(SD / ISD / CISD phase selection), :mod:`snr` (closed-form mean SNR),
:mod:`mc` (Monte-Carlo engine) and :mod:`cli`.
"""

__version__ = "0.1.0"
