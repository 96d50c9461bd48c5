"""gradbridge: backpropagate neural no-reference metric scores to the
input image and export NGF gradient fields and score CSVs."""

from .bridge import BridgeJob, evaluate, export_gradients, export_scores
from .zoo import BUILTIN_METRICS, create_metric

__all__ = ["BridgeJob", "BUILTIN_METRICS", "create_metric", "evaluate",
           "export_gradients", "export_scores"]
