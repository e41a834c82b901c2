"""
Test package for spinekit

This package contains tests for the toolkit.
""" 