"""claimsml: self-supervised claims modeling pipeline."""

__version__ = "0.1.0"
