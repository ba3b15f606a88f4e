"""Layer-wise stability control for deep recurrent stacks."""

__version__ = "0.1.0"
