"""amilkit: distantly supervised relation extraction with abstractified
multi-instance bags, verifiable at desk scale on synthetic corpora."""

__version__ = "0.1.0"
