"""Version information for the motionflow package."""

# setup.py reads the last line of this file, keep it last:
__version__ = '0.1.0'
