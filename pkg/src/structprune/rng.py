"""Deterministic, platform-independent random streams.

Generator: xoshiro256** whose four state words come from splitmix64 applied
to the integer seed. Derived quantities:

* uniform in (0, 1]:  ``((x >> 11) + 1) * 2**-53``
* normal: Box-Muller on consecutive uniform pairs ``(u1, u2)``,
  ``sqrt(-2 ln u1) * cos(2 pi u2)`` (one normal per pair)
* integer in ``[0, n)``: ``x % n``
"""
import numpy as np

from .kernels import splitmix64_seed, xoshiro_fill


class Xoshiro256:
    def __init__(self, seed):
        self.seed = int(seed)
        self.state = splitmix64_seed(seed)

    def next_u64(self, n):
        out = np.empty(int(n), dtype=np.uint64)
        if n:
            xoshiro_fill(self.state, out)
        return out

    def uniform(self, n):
        x = self.next_u64(n)
        return ((x >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53

    def normal(self, n, std=1.0):
        u = self.uniform(2 * int(n)).reshape(-1, 2)
        return std * np.sqrt(-2.0 * np.log(u[:, 0])) * np.cos(2.0 * np.pi * u[:, 1])

    def integers(self, high, n):
        if high < 1:
            raise ValueError("high must be >= 1")
        return (self.next_u64(n) % np.uint64(high)).astype(np.int64)
