"""Self-contained neural style transfer engine.

Dense tensors, reverse-mode differentiation, convolutional network
inference, Gram/AdaIN style losses with activation smoothing, pixel-space
optimizers, and a batch CLI for running stylization experiments.
"""

__version__ = "0.1.0"
