"""parabh: a desk-scale laboratory for parabolic boundary Harnack numerics."""

__version__ = "0.1.0"
