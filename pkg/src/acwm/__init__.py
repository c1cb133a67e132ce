"""Action-conditioned latent world models for longitudinal biosignals."""

__version__ = "0.1.0"
