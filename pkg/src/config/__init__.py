"""
Configuration module for spinekit

This module contains configuration-related functionality.
"""
