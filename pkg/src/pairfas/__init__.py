"""Paired live/attack training toolkit for face anti-spoofing experiments.

Modules, roughly in pipeline order: ``datamodel`` (records, formats, synthetic
data), ``pairmine`` (embedding-based pair mining), ``sampler`` (paired
batches), ``augment`` (live-only augmentation and CutMix), ``losses`` (focal
and supervised contrastive objectives), ``trainer`` (toy model, AdamW,
training loop), ``metrics`` (APCER/BPCER/ACER/EER/AUC) and ``cli``.
"""

__version__ = "0.1.0"
