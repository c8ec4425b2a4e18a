"""Speech emotion recognition with vertically patched vision transformers.

A teacher ViT (convolutional stem + image coordinate encoding) hands its
locality and positional knowledge to a plain student ViT through L1
feature-map matching.
"""

__version__ = "0.1.0"
