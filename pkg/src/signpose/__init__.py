"""Traffic-sign boundary estimation from template-vertex regression."""

__version__ = "0.1.0"
