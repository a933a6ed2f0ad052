"""Referring video instrument segmentation toolkit.

Given a short clip and a natural-language expression, predict the per-frame
binary mask of the referred object. The pipeline couples a clip-level
spatio-temporal encoder with an object-level appearance branch, fuses both
with the text through a directed text-to-object relation graph, and decodes
per-query mask sequences with a transformer + feature-pyramid head.
"""

__version__ = "0.1.0"
