"""Link-level OFDM simulator with a transformer neural receiver.

Modules: ``numerics`` (tensors, reverse-mode autodiff, AdamW), ``modem``,
``ldpc``, ``channel``, ``baseline_rx``, ``neural_rx``, ``trainer``,
``harness``, ``config`` and ``cli``.
"""

__version__ = "0.1.0"
