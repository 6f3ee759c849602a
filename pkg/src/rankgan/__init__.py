"""Stage-wise maximum-margin ranking GAN at desk scale."""

__version__ = "0.1.0"
