"""Information-theoretic analysis of projection heads in contrastive learning.

Submodules:

* ``tensor_core``: validated float64 matrices, Gram kernels, Jacobi eigensolver.
* ``exact_info``: exact Shannon quantities and bound checks on discrete chains.
* ``matrix_info``: matrix-based Renyi entropy / MI estimators and their gradients.
* ``nn_engine``: a small reverse-mode autodiff engine, losses and projection heads.
* ``train_harness``: toy training runs, online probes and sweeps.
* ``cli``: the ``projector-info`` command.
"""

__version__ = "0.1.0"
