"""affina: affine-invariant feature detection, description and geometric verification."""

__version__ = "0.1.0"
