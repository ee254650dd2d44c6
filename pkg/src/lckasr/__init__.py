"""Lightweight super-resolution with large coordinate kernel attention, in NumPy."""
__version__ = "0.1.0"
