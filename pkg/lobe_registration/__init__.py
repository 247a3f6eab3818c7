"""Lobe Registration - deformable registration of inflated/deflated lung lobe models and strain analysis."""

__version__ = "0.1.0"
