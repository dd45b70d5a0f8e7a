"""Distribution-grid expansion planning with network tariffs."""

__version__ = "0.1.0"
