"""Apnea-hypopnea event detection on respiratory polysomnography signals.

A small numpy package: record/annotation I/O, a default-event convolutional
detector with its own autodiff backend, training with hard-negative mining,
full-record inference, consensus-based evaluation and a synthetic data
generator.
"""

__version__ = "0.1.0"
