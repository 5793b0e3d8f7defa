"""Continual-learning lab for parameter-efficient tuning with orthogonal
gradient projection.

A small frozen transformer is tuned per task through one of four insertion
paradigms (prompt, prefix, adapter, LoRA).  After each task the lab collects
features at every insertion site, builds near-null-space bases from their
singular spectra, and projects later gradients onto those bases so that old
inputs keep seeing the function they were trained on.

Submodules are imported explicitly (`from orthopet import trainer`, ...);
nothing heavy happens at package import time.
"""

__version__ = "0.1.0"
