"""Numerical toolkit for ensemble-engineered field squeezing in optical cavities.

The package is organised around the pipeline it simulates:

- ``fockcore``     truncated Fock/atomic Hilbert-space numerics
- ``params``       physical parameters, mode geometry, derived effective model
- ``hamiltonians`` builders for every level of the reduction ladder
- ``evolution``    unitary/dissipative propagation and the full-vs-effective harness
- ``squeeze``      exact squeeze/displacement operators and closed-form analytics
- ``inout``        input-output theory of the driven two-mode parametric cavity
- ``cli``          config-driven batch front-end (CSV/JSON reports and figures)

All frequencies and rates are expressed in units of a reference coupling g,
times in units of 1/g.
"""

__version__ = "0.1.0"
