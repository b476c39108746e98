"""Monocular surface reconstruction of resident space objects from fly-around imagery.

The package chains background masking, incremental structure from motion,
a hash-grid neural SDF, marching-cubes meshing and per-frame photometric
compensation, and ships a synthetic fly-around generator with full ground truth.
"""

__version__ = "0.1.0"
