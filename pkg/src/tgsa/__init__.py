"""Speech denoising with Gaussian-weighted self-attention.

Subpackages build on a minimal reverse-mode autodiff core (``tensor``):
attention schemes (``attention``), the real masking encoder (``encoder``),
the dual-path complex network (``complex_net``), STFT/ISTFT and mixing
(``dsp``), losses and metrics (``losses``), and the training/verification
command line (``cli``).
"""

from .tensor import Tensor, backward

__version__ = "0.1.0"

__all__ = ["Tensor", "backward", "__version__"]
