"""Three-step deformable mesh registration."""
