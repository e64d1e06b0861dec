"""Virtual element solvers for elliptic problems with rough sources."""
__version__ = "0.1.0"
