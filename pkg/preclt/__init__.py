"""
preclt - Monte Carlo laboratory for the central limit theorem of diagonal
entries of sample precision matrices.
"""
__version__ = "1.0.0"
