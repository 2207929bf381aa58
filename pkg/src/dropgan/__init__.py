"""Prior-conditioned GAN for raindrop removal, with a synthetic data pipeline."""

__version__ = "0.1.0"
