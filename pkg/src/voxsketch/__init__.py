"""voxsketch: sketch-conditioned 3D voxel shape generation.

A two-stage generative pipeline over 32^3 occupancy grids: a discrete
autoencoder compresses shapes into token grids, a masked bidirectional
transformer models the tokens conditioned on frozen image features, and a
guided iterative decoder turns a single sketch into several shapes.
"""

__version__ = "0.1.0"
