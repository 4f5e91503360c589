"""Collaboration-aware graph convolution for recommendation."""
