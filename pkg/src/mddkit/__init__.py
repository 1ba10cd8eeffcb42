"""mddkit: desk-scale mispronunciation detection and diagnosis toolkit.

Pieces: a minimal autodiff engine, monotone 1D optimal-transport
alignment losses, CTC and consistency objectives, toy encoder/decoder/
teacher models, joint AM/LM beam decoding, hierarchical MDD metrics, a
synthetic error-injected corpus generator, and a CLI that ties the
training and evaluation pipeline together.
"""

from ._kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
