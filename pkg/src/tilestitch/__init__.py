"""Tiled inference and stitching for segmentation of large rasters."""

__version__ = "0.1.0"
