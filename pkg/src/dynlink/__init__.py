"""Dynamic word embeddings for forecasting concept co-occurrence in dated abstracts."""

__version__ = "0.1.0"
