"""Image-retrieval localization from semantic label maps."""

__version__ = "0.1.0"
