"""Meta-learning engine and benchmark suite for same-different visual reasoning.

Everything runs on CPU via numpy.  The package is organised bottom-up:

- ``rng``        deterministic PCG32 streams, keyed by (seed, task, index)
- ``tensor``     reverse-mode autodiff whose backward pass is itself
                 differentiable (needed for second-order meta-gradients)
- ``nn``         neural net ops built from the tensor primitives
- ``optim``      Xavier init, SGD and Adam steps
- ``models``     the Conv2/Conv4/Conv6 classifier family and checkpoints
- ``stimuli``    procedural same-different image generators (10 task families)
- ``episodes``   episodic samplers, epoch assembly, the flattening control
- ``training``   conventional and meta (MAML / first-order) training loops
- ``experiments``plan-driven benchmark runs with delimited result tables
- ``analysis``   weight-space PCA of solution clouds
- ``plotting``   matplotlib report figures
- ``verify``     gradient and meta-gradient oracle checks
- ``cli``        the ``relmeta`` command-line entry point
"""

__version__ = "0.1.0"
