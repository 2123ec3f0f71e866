"""Brain-to-image decoding benchmark kit.

Preprocessing, linear and deep decoders, combined contrastive/reconstruction
training, single-trial evaluation and scaling/cost analysis, runnable on
synthetic data.
"""

__version__ = "0.1.0"
