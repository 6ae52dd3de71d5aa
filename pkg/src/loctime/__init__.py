"""Numerical local times of ``V(t, X_t)`` along zero-level curves of ``V``,
with expected-exposure and CVA applications."""

__version__ = "0.1.0"
