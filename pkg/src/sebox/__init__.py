"""SEAndroid policy decomposition into atomic access boxes, plus Git history metrics."""

__version__ = "0.1.0"
