"""Part-localized editing on a miniature text-conditioned diffusion model."""

__version__ = "0.1.0"
