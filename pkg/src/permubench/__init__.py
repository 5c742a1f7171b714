"""Few-shot robustness benchmark for compact scratch-trained image classifiers.

Trains four sub-1M-parameter backbones on MedMNIST-format data under a
fixed few-shot protocol and evaluates them clean, under parametric image
corruptions, and under FGSM/PGD attacks, then aggregates per-seed means,
mean ranks, and retention ratios into report tables.
"""

__version__ = "0.1.0"
