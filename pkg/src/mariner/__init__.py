"""Reference-guided enhancement of rendered images.

Given a degraded rendering of a viewpoint and a nearby real photo, the model
matches deep features between them, warps reference detail onto the
rendering and decodes an enhanced image, optionally refining over several
iterations.
"""

__version__ = "0.1.0"

from .config import (
    DecoderConfig,
    DegradeConfig,
    EncoderConfig,
    EnhancerConfig,
    LossWeights,
    MatcherConfig,
    TrainConfig,
)
from .enhancer import (
    Checkpoint,
    Enhancer,
    enhance,
    enhance_intermediate,
    load_checkpoint,
    save_checkpoint,
)
from .metrics import MetricReport

__all__ = [
    "Checkpoint",
    "DecoderConfig",
    "DegradeConfig",
    "EncoderConfig",
    "Enhancer",
    "EnhancerConfig",
    "LossWeights",
    "MatcherConfig",
    "MetricReport",
    "TrainConfig",
    "enhance",
    "enhance_intermediate",
    "load_checkpoint",
    "save_checkpoint",
]
