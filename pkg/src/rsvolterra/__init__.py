"""Regime-switching Volterra dynamics on networks.

Completely monotone memory kernels and their exponential-sum surrogates,
exact Markov environments, a semi-implicit integrator, burst and tail
diagnostics, and a Hawkes micro-macro study.
"""

__version__ = "0.1.0"
