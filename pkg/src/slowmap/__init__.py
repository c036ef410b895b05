"""Learning slow variables of multiscale SDEs with bottlenecked encoder-decoder networks."""

__version__ = "0.1.0"
