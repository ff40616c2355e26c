"""Darboux charts for weak symplectic forms, numerically.

Modules
-------
symplin
    Linear symplectic algebra: flat map, omega-norms, symplectic bases.
fields, moser
    Form fields on regions of ``R^d`` and Moser's path method.
dirlim
    Direct limits of nested spaces and the shrinking-radius counterexample.
odelimit
    Non-autonomous ODEs on a direct limit and conditions (A), (B), (C).
loopspace
    Discretized Sobolev loop spaces and the loop symplectic form.
estimators
    ``fit`` / ``transform`` wrappers for Darboux coordinates.
"""

from .exceptions import DegeneracyError, DomainError, InputError
from .estimators import DarbouxChart, LinearDarboux
from .symplin import j_std, linear_darboux

__all__ = ["DegeneracyError", "DomainError", "InputError", "DarbouxChart", "LinearDarboux",
           "j_std", "linear_darboux"]
__version__ = "0.1.0"
