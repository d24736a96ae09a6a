"""Query-log mining of dietary B12 intake and its medical-term associations."""

__version__ = "0.1.0"
