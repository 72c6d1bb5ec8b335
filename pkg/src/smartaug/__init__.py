"""Segmentation-aware data augmentation: SmartAugment, SmartSamplingAugment
and baselines, with a strategy-search harness."""

__version__ = "0.1.0"
