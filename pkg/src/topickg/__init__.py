"""Knowledge-graph guided hierarchical embedded topic models."""

from .estimator import TopicKG, TopicKGA
from .trainer import TrainConfig, train

__all__ = ["TopicKG", "TopicKGA", "TrainConfig", "train"]
__version__ = "0.1.0"
