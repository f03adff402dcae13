"""Detection of small flying objects in moving-camera video from motion-stabilised spatio-temporal cubes."""

__version__ = "0.1.0"
