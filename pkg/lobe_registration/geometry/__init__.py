"""Core geometric types and discrete operators."""
