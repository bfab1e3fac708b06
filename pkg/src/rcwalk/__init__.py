"""Random walks among random conductances: environments, percolation
geometry, time-changed walks, effective conductances and experiments.
"""

__version__ = "0.1.0"
