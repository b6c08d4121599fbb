"""
Counter-based seed derivation.

Every random draw is keyed by the trial seed plus labels naming its purpose,
so results do not depend on execution order or thread scheduling.
"""
import zlib
from typing import Union

import numpy as np

Label = Union[str, int, float, None]


def _label_word(label: Label) -> int:
    return zlib.crc32(repr(label).encode("utf-8")) & 0xFFFFFFFF


def derive_seed(base: int, *labels: Label) -> int:
    """Derive a 63-bit seed from ``base`` and any number of labels."""
    entropy = [int(base) & 0xFFFFFFFF, (int(base) >> 32) & 0xFFFFFFFF] + [_label_word(l) for l in labels]
    state = np.random.SeedSequence(entropy).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


def rng_for(base: int, *labels: Label) -> np.random.Generator:
    return np.random.default_rng(derive_seed(base, *labels))
