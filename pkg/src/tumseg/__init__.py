"""Brain tumour segmentation with a triplanar ensemble of 2D U-Nets."""

__version__ = "0.1.0"
