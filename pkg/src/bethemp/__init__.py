"""Message passing as constrained Bethe free energy minimization."""

__version__ = "0.1.0"
