"""
Unit test package for spinekit

This package contains unit tests for the toolkit.
""" 