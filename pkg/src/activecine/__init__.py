"""Quality-aware active acquisition for undersampled radial cine MRI."""

__version__ = "0.1.0"
