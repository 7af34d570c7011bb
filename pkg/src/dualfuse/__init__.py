"""Training-free dual-line diffusion sampling with identity-aware noise fusion."""

__version__ = "0.1.0"
