"""puddleseg: prompt-conditioned standing-water segmentation at desk scale.

A promptable transformer segmenter is co-trained with a small task-specific
CNN: the CNN's predictions become spatial prompts, class prototypes matched
against the image embedding become semantic prompts, and the image's
amplitude spectrum becomes a style prompt. A learnable combiner merges the
prompt families for the mask decoder, while a histogram-equalization adapter
feeds enhanced image features laterally into the (frozen) encoder.
"""

from .config import ONE_STAGE, TWO_STAGE, TrainConfig
from .estimator import PromptedSegmenter
from .pipeline import SegmentationPipeline
from .training import (TrainResult, train, train_one_stage, train_two_stage,
                       pipeline_from_checkpoint)

__all__ = [
    "ONE_STAGE",
    "TWO_STAGE",
    "TrainConfig",
    "PromptedSegmenter",
    "SegmentationPipeline",
    "TrainResult",
    "train",
    "train_one_stage",
    "train_two_stage",
    "pipeline_from_checkpoint",
]

__version__ = "0.1.0"
