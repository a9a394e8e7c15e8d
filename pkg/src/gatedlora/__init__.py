"""Gated low-rank adapters with learned quantization bitwidths.

Core pieces:

- :mod:`gatedlora.tensor` -- reverse-mode autodiff on numpy float64 arrays
- :mod:`gatedlora.quantizer` -- residual multi-bitwidth quantizer with
  stochastic bitwidth gates
- :mod:`gatedlora.adapter` -- gated-rank low-rank adapter linear layers and a
  small attention block built from them
- :mod:`gatedlora.training` -- synthetic tasks, toy model, training loop
- :mod:`gatedlora.complexity` -- analytic MAC/BOP/parameter auditor
- :mod:`gatedlora.api` / :mod:`gatedlora.cli` -- service and thin-client CLI
"""

from gatedlora.tensor import Tensor, Tape, no_grad

__all__ = ["Tensor", "Tape", "no_grad"]

__version__ = "0.1.0"
