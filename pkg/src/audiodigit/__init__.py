"""Audiogram digitization toolkit.

Converts images of audiology reports into structured hearing-threshold
records by reconstructing the plot grid geometry (deskew, line detection,
axis-label association, pixel-to-frequency/threshold transforms) and
classifying the plotted audiological symbols.  Ships with a synthetic
report renderer, an evaluation harness, a CLI, and a review HTTP service.
"""

__version__ = "0.1.0"
