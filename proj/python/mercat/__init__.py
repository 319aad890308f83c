"""Truncation-robust hybrid search and embedding workbench."""

import json as _json
import os as _os

from ._mercat import (
    ComparisonError,
    ConfigError,
    CorrelationError,
    DenseIndex,
    EncoderModel,
    FormatError,
    LexicalIndex,
    MercatError,
    PcaModel,
    RangeError,
    ShapeError,
    StageError,
    ValidationError,
    cosine,
    gradient_check,
    hybrid_search,
    l2_normalize,
    load_pca,
    mnr_loss,
    mrl_loss,
    ndcg_at_k,
    pca_fit,
    pearson,
    precision_recall_at_k,
    spearman,
    tokenize,
    truncate,
)
from ._mercat import train as _train

__version__ = "0.1.0"


def train(pairs, model, **config):
    """Trains a copy of `model` on (query, title) pairs; returns (model, [(epoch, loss)])."""
    return _train(list(pairs), model, _json.dumps(config))


def datagen(spec, out_dir, sts_pairs=2000):
    """Writes a synthetic marketplace dataset to `out_dir` and returns its counts."""
    from ._mercat import _datagen

    return _json.loads(_datagen(_json.dumps(spec), _os.fspath(out_dir), sts_pairs))


def run_pipeline(config):
    """Runs the full experiment; returns (run_dir, metrics)."""
    from ._mercat import _run_pipeline

    result = _json.loads(_run_pipeline(_json.dumps(config)))
    return result["run_dir"], result["metrics"]
