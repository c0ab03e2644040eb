"""Species encounter-rate prediction with partial observations."""

__version__ = "0.1.0"
