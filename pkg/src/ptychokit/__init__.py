"""Ptychographic phase retrieval toolkit.

Diffraction simulation, a reverse-mode autodiff engine, a dual-gain
encoder/decoder network with circular phase outputs, a composite training
objective, patch stitching and metrics, and an iterative reference solver.
"""

__version__ = "0.1.0"
