"""Social diffusion on networks with meso-scale structure."""

__version__ = "0.1.0"
