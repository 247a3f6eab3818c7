"""Synthetic lobe phantoms with ground-truth deformations."""
