"""gav: scene-text verification — score how likely a character string
appears in an image, with a text-guided spatial attention model."""

__version__ = "0.1.0"
