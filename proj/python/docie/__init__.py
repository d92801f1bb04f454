"""Document key-information extraction toolkit (compiled core)."""

import json as _json

from docie._core import (
    crf_log_partition,
    entities_from_tags,
    generate,
    iou,
    predict,
    relative_bucket,
    run_cli,
    softmax,
    train,
    viterbi,
)
from docie._core import evaluate_json as _evaluate_json

__all__ = [
    "crf_log_partition",
    "entities_from_tags",
    "evaluate",
    "generate",
    "iou",
    "predict",
    "relative_bucket",
    "run_cli",
    "softmax",
    "train",
    "viterbi",
]


def evaluate(gold_path, pred_path):
    """Score predictions against gold annotations; returns the report dict."""
    return _json.loads(_evaluate_json(str(gold_path), str(pred_path)))
