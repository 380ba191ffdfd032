"""Near-field distributed massive-MIMO channel simulation and estimation."""

__version__ = "0.1.0"
