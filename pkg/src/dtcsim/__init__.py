"""Simulation and analysis toolkit for discrete time crystals in dipolar spin ensembles.

Submodules: :mod:`spinops` (operators and bases), :mod:`model` (Hamiltonians
and coefficient tables), :mod:`evolve` (Floquet evolution), :mod:`meanfield`
(self-consistent stationary states), :mod:`dephase` (Markovian dephasing
model), :mod:`analyze` (spectra and fits) and :mod:`cli` (campaigns).
"""
__version__ = "0.1.0"

from . import spinops, model, evolve, meanfield, dephase, analyze  # noqa: E402,F401
