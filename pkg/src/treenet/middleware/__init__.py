from .base import (ConfigError, Strategy, StrategyKind, StrategyTag, compare_int_metrics, int_metric)
from .inject import InjectStrategy
from .pubsub import PubSubStrategy, TopicOp
from .topology import Candidate, TopologyStrategy, metric_selector

__all__ = [
    "Candidate", "ConfigError", "InjectStrategy", "PubSubStrategy", "Strategy", "StrategyKind",
    "StrategyTag", "TopicOp", "TopologyStrategy", "compare_int_metrics", "int_metric", "metric_selector",
]
