"""File formats, case manifests and report writers."""
