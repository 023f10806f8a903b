"""qasr: quantized-RNN speech decoding with a cycle-accurate PE-array model.

Subpackages by responsibility:
  quant     - symmetric power-of-two fixed-point quantization
  rnn       - peephole LSTM, float and fixed datapaths, LUT activations
  hwsim     - PE-array hardware model, cycle counts, context memory
  decoder   - tree-structured CTC prefix beam search with LM fusion
  wordlm    - ARPA back-off tri-gram reader and rescorer
  frontend  - log-mel + energy + deltas, sliding-window normalization
  container - model serialization (quantized tensors, schemes, shadows)
  engine    - end-to-end decoding in float / fixed / hwsim modes
  toy       - random toy models and synthetic inputs
"""

__version__ = "0.1.0"

from . import container, decoder, engine, frontend, hwsim, quant, rnn, toy, wordlm

__all__ = [
    "container",
    "decoder",
    "engine",
    "frontend",
    "hwsim",
    "quant",
    "rnn",
    "toy",
    "wordlm",
    "__version__",
]
