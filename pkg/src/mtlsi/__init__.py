"""Linear cross-task attention, semantic token distillation and cross-window
attention for multi-task dense prediction, on a small numpy autograd core."""

__version__ = "0.1.0"
