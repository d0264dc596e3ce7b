"""Error calculus built on Fisher information."""
