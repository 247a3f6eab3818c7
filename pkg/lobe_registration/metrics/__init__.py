"""Shape distances and evaluation metrics."""
