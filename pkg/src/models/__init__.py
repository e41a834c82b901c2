"""
Models module for spinekit

This module contains the Pydantic data models of the toolkit.
"""
