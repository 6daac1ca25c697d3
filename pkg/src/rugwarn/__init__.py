"""Early-warning scoring of token rug pulls from ERC-20 style transfer records."""

from .errors import RugwarnError
from .features import FEATURE_NAMES, RiskVector, compute_features
from .ingest import TokenDataset, TransferRecord
from .patterns import PatternScores, score_patterns

__version__ = "0.1.0"

__all__ = [
    "FEATURE_NAMES",
    "PatternScores",
    "RiskVector",
    "RugwarnError",
    "TokenDataset",
    "TransferRecord",
    "compute_features",
    "score_patterns",
]
