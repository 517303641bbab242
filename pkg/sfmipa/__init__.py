"""
SFMIPA: Stochastic Flow Model simulator with Infinitesimal Perturbation Analysis.

Simulates N timeout-controlled transmitters sharing one FCFS fluid channel,
computes per-path goodput and its exact derivatives with respect to the
timeout thresholds, checks them against finite differences and tunes the
thresholds by projected stochastic gradient ascent.
"""

__version__ = "1.0.0"
