"""Atomic-frequency-comb quantum memory simulator."""
