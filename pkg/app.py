"""
spinekit - Main application entry point

This is the main entry point for spinekit, a command-line toolkit for
two-phase (semantic, then instance) spine segmentation, annotation fusion,
synthetic phantoms and panoptic evaluation.
"""
import os
import sys

# Add the src directory to the Python path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

# Import the main app from the src module
from src.app import main as run


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
