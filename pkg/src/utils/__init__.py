"""
Utilities module for spinekit

This module contains utility functions for error handling, logging and threading.
"""
