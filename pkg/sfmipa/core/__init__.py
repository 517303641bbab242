"""Core modules for SFMIPA: signals, scenarios, simulation, IPA, estimation and export.

Import submodules directly, e.g. ``from sfmipa.core.simulator import run_path``.
"""
