"""Language-conditioned diffusion traffic simulation toolkit."""

__version__ = "0.1.0"
