"""Actor-critic agents whose networks grow during training by function-preserving morphisms."""

__version__ = "0.1.0"
