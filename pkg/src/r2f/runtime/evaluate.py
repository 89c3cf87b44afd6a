"""Accuracy of a deployed model under soft errors."""
from __future__ import annotations

import numpy as np

from .. import data
from ..errors import ConfigError
from ..faults import FaultConfig
from ..tmr import TmrPolicy, tmr_forward

# First execution-key component for evaluation runs, keeping their fault
# streams apart from those of training iterations.
EVAL_TAG = 0xE7A1


def topk_correct(logits, labels, k):
    z = np.asarray(logits, dtype=np.float64).reshape(len(labels), -1)
    k = min(k, z.shape[1])
    # stable sort on the negated logits: ties resolve to the lower class index
    top = np.argsort(-z, axis=1, kind="stable")[:, :k]
    return (top == np.asarray(labels)[:, None]).any(axis=1)


def evaluate(model, dataset, cfg: FaultConfig, policy: TmrPolicy = TmrPolicy(), n=None,
             batch_size=1, stream=0):
    """Top-1/top-5 accuracy over the first ``n`` samples.

    Each forward of ``batch_size`` samples draws its own fault stream, keyed
    by ``(EVAL_TAG, stream, batch index)``; weight faults are shared within a
    batch, so ``batch_size=1`` makes every inference independent.
    """
    n = len(dataset) if n is None else int(n)
    if not 0 < n <= len(dataset):
        raise ConfigError(f"n must lie in [1, {len(dataset)}], got {n}")
    x = data.to_input(dataset.images[:n])
    labels = dataset.labels[:n].astype(np.int64)
    if not cfg.active:
        batch_size = max(batch_size, 256)
    top1 = np.zeros(n, dtype=bool)
    top5 = np.zeros(n, dtype=bool)
    for b, start in enumerate(range(0, n, batch_size)):
        sl = slice(start, start + batch_size)
        out = tmr_forward(model, x[sl], cfg, policy, (EVAL_TAG, stream, b)).voted[-1]
        top1[sl] = topk_correct(out, labels[sl], 1)
        top5[sl] = topk_correct(out, labels[sl], 5)
    return {"top1": float(top1.mean()), "top5": float(top5.mean()), "n": n}
