"""Named, deterministic RNG substreams.

Every stochastic step in the workbench draws from a substream derived from
the root seed plus a label path (e.g. ("session", replicate, day, "order")).
Substreams are independent of execution order, so serial and parallel runs
of the same configuration produce identical results.
"""

import hashlib

import numpy as np


def derive_seed(root_seed: int, *labels) -> int:
    """Derive a 64-bit child seed from a root seed and a label path."""
    payload = repr((int(root_seed), tuple(str(x) for x in labels))).encode()
    return int.from_bytes(hashlib.sha256(payload).digest()[:8], "little")


def substream(root_seed: int, *labels) -> np.random.Generator:
    """Generator seeded from the (root, labels) substream."""
    return np.random.default_rng(derive_seed(root_seed, *labels))
