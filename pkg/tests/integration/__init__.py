"""
Integration test package for spinekit

This package contains integration tests for the toolkit.
""" 