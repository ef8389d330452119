"""Turning predicted click probabilities into binary click decisions."""

from __future__ import annotations

import numpy as np

from .diffmath import Rng, Tensor, gumbel_sigmoid, ops
from .diffmath.nn import BCE_EPS
from .errors import ConfigurationError

STRATEGIES = ("threshold", "sample", "gumbel", "teacher")


def discretize(probs, strategy: str, rng: Rng | None = None, tau: float = 1.0, labels=None,
               threshold: float = 0.5, logits: Tensor | None = None) -> Tensor:
    """Binary clicks from probabilities.

    threshold -> 1[p > threshold]; sample -> Bernoulli(p); both are constants.
    gumbel -> straight-through hard Gumbel-sigmoid sample, differentiable.
    teacher -> ``labels`` verbatim.
    Pass ``logits`` to skip the probability-to-logit round trip for gumbel.
    """
    if strategy == "teacher":
        if labels is None:
            raise ConfigurationError("teacher forcing needs observed click labels")
        return Tensor(np.asarray(labels, dtype=np.float64))
    p = probs.data if isinstance(probs, Tensor) else np.asarray(probs, dtype=np.float64)
    if strategy == "threshold":
        return Tensor((p > threshold).astype(np.float64))
    if strategy == "sample":
        if rng is None:
            raise ConfigurationError("sampling needs an rng")
        return Tensor(rng.bernoulli(p))
    if strategy == "gumbel":
        if rng is None:
            raise ConfigurationError("gumbel discretization needs an rng")
        if logits is None:
            pc = ops.clamp(probs, BCE_EPS, 1.0 - BCE_EPS)
            logits = ops.sub(ops.log(pc), ops.log(ops.sub(1.0, pc)))
        return gumbel_sigmoid(logits, tau, rng)[1]
    raise ConfigurationError(f"unknown discretization strategy {strategy!r}; expected one of {STRATEGIES}")
