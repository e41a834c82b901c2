"""
Services module for spinekit

This module contains the volume, labelling, phantom, pipeline, assembly,
post-processing, annotation-fusion and evaluation services.
"""
