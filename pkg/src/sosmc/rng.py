"""Named random substreams derived from a single root seed.

Every source of randomness in the package (particle initialisation, kernel
noise, resampling indices, reference batches, evaluation chains, buffer
reinjection, ...) draws from its own named stream.  Streams are derived
deterministically from ``(root_seed, stream id, *indices)``, so changing the
draws of one subsystem never perturbs another, and a run replays bit-exactly
from its root seed.
"""

from __future__ import annotations

import numpy as np

# Stable ids; append only, never renumber.
STREAM_IDS = {
    "init": 0,          # initial particle positions
    "propagate": 1,     # ULA kernel noise during tuning
    "resample": 2,      # categorical resampling indices
    "reference": 3,     # forward-KL reference batches
    "eval": 4,          # fresh-reward evaluation chains
    "model_init": 5,    # network weight initialisation
    "data": 6,          # synthetic dataset generation
    "buffer": 7,        # replay-buffer initialisation and index draws
    "reinjection": 8,   # fresh-noise reinjection in pretraining
    "pcd_noise": 9,     # ULA noise inside pretraining
    "generic": 10,      # anything that does not fit the above
}


def stream_rng(root_seed: int, name: str, *indices: int) -> np.random.Generator:
    """Return the generator for the named substream of ``root_seed``.

    Extra ``indices`` split a stream further, e.g. one evaluation chain per
    checkpoint: ``stream_rng(seed, "eval", checkpoint_index)``.
    """
    if name not in STREAM_IDS:
        raise KeyError(f"unknown rng stream {name!r}; known: {sorted(STREAM_IDS)}")
    entropy = (int(root_seed), STREAM_IDS[name]) + tuple(int(i) for i in indices)
    return np.random.default_rng(np.random.SeedSequence(entropy))
