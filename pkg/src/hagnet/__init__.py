"""HAG-Net: graph classification with heterogeneous neighbourhood aggregation."""

from .graph import (
    BatchedGraph,
    Dataset,
    DatasetError,
    Graph,
    batch,
    generate_synthetic,
    load_dataset,
    save_dataset,
    stratified_kfold,
    unbatch,
)
from .layers import AggregatorKind, CombineKind, ConfigError, MergeKind
from .model import (
    BaselineConfig,
    GraphClassifier,
    HagNetConfig,
    build,
    build_baseline,
    build_model,
    builtin_config,
    load_checkpoint,
    load_config,
    save_checkpoint,
)
from .training import TrainSettings, run_kfold

__version__ = "0.1.0"
