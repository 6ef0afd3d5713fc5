"""Attention-based joint prediction model, its variants, losses and training loop."""

from navfuse.predictor.config import ModelConfig, TrainConfig, Variant

__all__ = ["ModelConfig", "TrainConfig", "Variant"]
