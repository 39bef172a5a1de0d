"""Image corpus curation, degradation synthesis, and diffusion data tooling."""

__version__ = "0.1.0"
