"""Lightweight, explainable flow-based intrusion detection.

Feature engineering, a conv/recurrent/attention classifier trained with Adam,
Shapley and attention explanations, and an evaluation / latency harness.
"""

__version__ = "0.1.0"
