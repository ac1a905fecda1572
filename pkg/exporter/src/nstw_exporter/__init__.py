"""Convert torchvision checkpoints into the NSTW weight format."""

__version__ = "0.1.0"
