"""Learning-advantage-distribution objectives and controlled bandit experiments."""

__version__ = "0.1.0"
