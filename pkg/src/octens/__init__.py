"""Parallel-branch weighted ensembling for multi-label OCT biomarker prediction.

Submodules:

- ``imagepipe``: intensity transform, background removal and augmentations
- ``data``: score/label/manifest CSV formats, alignment, eye-wise split
- ``metrics``: thresholding and per-label / macro F1
- ``ensemble``: weighted branch combination and weight search
- ``blocks``: toy forward passes of multi-axis attention and MBConv blocks
- ``fixture``: the shipped five-branch weight table and golden outputs
"""

__version__ = "0.1.0"

BIOMARKERS = ("IRHRF", "PAVF", "FAVF", "IRF", "DRT_ME", "VD")
