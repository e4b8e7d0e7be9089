"""Deterministic random-stream derivation.

Every stochastic operation owns a stream derived from an integer seed plus
a domain tag (and, for per-cluster-per-round draws, the cluster id and
round index). Streams with distinct keys are statistically independent and
never shared between concurrent callers, so results cannot depend on
execution order or thread count.
"""

import numpy as np

from .errors import ValidationError

DOMAIN_INIT = 0
DOMAIN_PARTITION = 1
DOMAIN_BATCH = 2
DOMAIN_NOISE = 3
DOMAIN_SYNTH_MEANS = 4
DOMAIN_SYNTH_SPREAD = 5


def derive_rng(seed: int, *key: int) -> np.random.Generator:
    """Generator for the stream identified by (seed, key...)."""
    if not isinstance(seed, (int, np.integer)) or seed < 0:
        raise ValidationError(f"seed must be a non-negative integer, got {seed!r}")
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)))
