"""Mean-field optimal switching of a particle ensemble under a regime-switching chain."""

__version__ = "0.1.0"
