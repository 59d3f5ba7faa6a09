"""Photon statistics of a phonon-coupled, pulse-driven quantum-dot emitter.

Numerically exact path-integral, quantum-regression and polaron master
equation treatments of G1, G2 and Hong-Ou-Mandel correlations, and the
derived purity, indistinguishability, brightness and non-Markovianity.
"""
__version__ = "0.1.0"
