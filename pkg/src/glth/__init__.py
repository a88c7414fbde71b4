"""Iterative magnitude pruning over arbitrary orthonormal dictionaries.

Submodules
----------
linalg      orthogonal blocks, DCT basis
nn          flat-parameter MLP / CNN, backprop, SGD
data        CIFAR-10 binary loader, synthetic blobs, batching
dictionary  dictionaries as forward/adjoint maps, projections, bottlenecks
pruning     sparsify step, IMP with rewinding, fixed-subspace baseline
cli         ``glth`` command line tool
"""

from . import data, dictionary, linalg, nn, pruning

__version__ = "0.1.0"
