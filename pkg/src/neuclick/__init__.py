"""Neural click models as user-response functions for slate recommenders."""

__version__ = "0.1.0"
