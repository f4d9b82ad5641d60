"""Single-shot synthetic-wavelength interferometric depth imaging."""

__version__ = "0.1.0"
