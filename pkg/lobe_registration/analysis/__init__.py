"""Contraction, rotation and strain analysis of registered lobes."""
