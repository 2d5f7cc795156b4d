"""Age-stratified MF/MCF morphometry classification pipeline."""

__version__ = "0.1.0"
