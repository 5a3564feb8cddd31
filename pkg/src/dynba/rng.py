"""Portable counter-based random number generation.

All stochastic fixtures in this package draw from Philox-4x64 counter
streams so that a (seed, stream tag) pair reproduces the same values
bit-exactly across platforms and regardless of call order elsewhere.
Gaussians come from the Box-Muller transform with a fixed draw order
(one block of u1, then one block of u2), not from the ziggurat sampler,
so ports of this generator to other environments can match it exactly.
"""

import numpy as np

_U64 = np.uint64
_MASK64 = (1 << 64) - 1

# Stream tags keep independent purposes from colliding on one seed.
STREAM_SCENE = 1
STREAM_FLOW_NOISE = 2
STREAM_DEPTH_PRIOR = 3
STREAM_SCALE_BIAS = 4
STREAM_TEST = 9


class PortableRng:
    """Deterministic stream of uniforms and normals for one (seed, tags) key.

    The Philox key is the 64-bit seed; the counter block encodes the
    stream tags, so streams for different (tag, i, j) never overlap.
    """

    def __init__(self, seed: int, *tags: int):
        if len(tags) > 3:
            raise ValueError("at most 3 stream tags supported")
        counter = [0, 0, 0, 0]
        for slot, tag in enumerate(tags):
            counter[slot + 1] = int(tag) & _MASK64
        self._bits = np.random.Philox(key=int(seed) & _MASK64, counter=counter)

    def raw(self, n: int) -> np.ndarray:
        return self._bits.random_raw(n)

    def uniform(self, n: int) -> np.ndarray:
        """n doubles uniform on (0, 1], suitable as Box-Muller input."""
        bits = self.raw(n) >> _U64(11)
        return (bits.astype(np.float64) + 1.0) * (2.0 ** -53)

    def uniform_range(self, lo: float, hi: float, n: int) -> np.ndarray:
        return lo + (hi - lo) * self.uniform(n)

    def normal(self, shape) -> np.ndarray:
        """Standard normals via Box-Muller; fixed draw order (u1 block, u2 block)."""
        n = int(np.prod(shape)) if not np.isscalar(shape) else int(shape)
        pairs = (n + 1) // 2
        u1 = self.uniform(pairs)
        u2 = self.uniform(pairs)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.empty(2 * pairs)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        z = z[:n]
        if np.isscalar(shape):
            return z
        return z.reshape(shape)
