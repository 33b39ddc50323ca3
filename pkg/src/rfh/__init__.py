"""Critical points, connecting orbits and mod-2 homology of a truncated Rabinowitz-type action."""
__version__ = "0.1.0"
