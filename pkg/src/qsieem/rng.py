"""Named random substreams derived from a single root seed."""

import zlib

import numpy as np

STREAMS = ("design", "reml-starts", "smc", "mh", "oracle", "acquisition")


def substream(seed, name):
    """Return a generator for the substream `name` of root `seed`.

    The stream key is a CRC32 of the name, so adding a consumer never
    shifts the draws of another one.
    """
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng([int(seed), key])


class RngStreams:
    """Lazily created, independent generators keyed by consumer name."""

    def __init__(self, seed):
        self.seed = int(seed)
        self._streams = {}

    def __getitem__(self, name):
        if name not in self._streams:
            self._streams[name] = substream(self.seed, name)
        return self._streams[name]
