"""
Seeded random streams
=====================

All randomness flows from one integer seed into counter-based Philox
generators; independent streams are split off the seed's ``SeedSequence``
instead of being reseeded. Nothing reads ambient entropy.
"""
from typing import List

import numpy as np

from homeofit.errors import ParameterError


def make_generator(seed: int) -> np.random.Generator:
    """Single Philox generator for ``seed``"""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def spawn_generators(seed: int, n: int) -> List[np.random.Generator]:
    """``n`` independent Philox streams split from ``seed``"""
    if n < 1:
        raise ParameterError(f"need at least one stream, got {n}")
    return [np.random.Generator(np.random.Philox(child)) for child in np.random.SeedSequence(seed).spawn(n)]
