"""Fragment-based 3D molecule assembly trained with proximal policy optimization."""

__version__ = "0.1.0"
