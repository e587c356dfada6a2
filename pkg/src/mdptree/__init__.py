"""Policy trees for families of MDPs."""

__version__ = "0.1.0"
