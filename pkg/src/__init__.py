"""
spinekit - two-phase semantic/instance spine segmentation toolkit.

This module initializes the src package.
"""
__version__ = "0.1.0"
