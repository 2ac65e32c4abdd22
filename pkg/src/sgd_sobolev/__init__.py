"""Linear stability of SGD and the Sobolev-seminorm bounds it implies."""

__version__ = "0.1.0"
