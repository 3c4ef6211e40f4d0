"""Longitudinal path-signature features and a Siamese verification pipeline
for class-imbalanced early diagnosis from two-timepoint cortical morphology."""

__version__ = "0.1.0"
