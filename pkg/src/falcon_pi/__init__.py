"""Two-party CNN inference: frequency-domain homomorphic linear layers and garbled non-linear layers."""

DEFAULT_P = 1316638721
DEFAULT_N = 2048
DEFAULT_FRAC_BITS = 8

__version__ = "0.1.0"
