"""Joint multi-agent trajectory prediction with navigation fusion, at desk scale."""

__version__ = "0.1.0"
