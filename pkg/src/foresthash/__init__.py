"""Random-forest semantic hashing with mutual-information code aggregation."""

__version__ = "0.1.0"

from foresthash._accel import BACKEND
from foresthash.aggregation import (
    AggregationConfig,
    BlockSelection,
    aggregate,
    exhaustive_select,
    greedy_select,
    random_select,
)
from foresthash.errors import (
    ConfigurationError,
    CorruptionError,
    ForestHashError,
    FormatError,
    UnsupportedVersionError,
    ValidationError,
)
from foresthash.hashcore import TreeShape, hamming, leaf_to_path, path_to_leaf
from foresthash.retrieval import RetrievalIndex, RetrievalMetrics, evaluate, query_radius
from foresthash.training import (
    Dataset,
    Forest,
    ForestConfig,
    encode_dataset,
    encode_hash,
    encode_leaves,
    train_forest,
)
