import zlib

import numpy as np


def derive_seed(root, *keys):
    """Split a root seed into an independent child seed per stage/fold/subject key.

    String keys are hashed with crc32 so the derivation is stable across
    processes (``hash()`` is salted per interpreter).
    """
    entropy = [int(root)]
    for key in keys:
        if isinstance(key, str):
            entropy.append(zlib.crc32(key.encode('utf-8')))
        else:
            entropy.append(int(key))
    return int(np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint32)[0])


def rng_for(root, *keys):
    return np.random.default_rng(derive_seed(root, *keys))
