"""Laser-line scanning of hanging workpieces for automated spray coating.

Frames from a camera watching a laser sheet are turned into a height
matrix of the passing plate; border, size, tilt and profile features feed
a nearest-neighbour classifier and a catalogue match, and the matching
spray template is sized and tilted to the measured plate.
"""

__version__ = "0.1.0"

from .kernels import BACKEND  # noqa: E402,F401
