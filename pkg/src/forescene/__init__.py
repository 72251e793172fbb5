"""Scene graph anticipation: graph auto-encoder plus latent diffusion over graph latents."""

__version__ = "0.1.0"
