"""Counter-based random streams keyed by (master seed, stream index).

Each stream is a Philox generator whose key is the (seed, index) pair and
whose counter's high word selects the purpose, so data generation, model
init, shuffling and probes never share draws. Uniforms take the top 53 bits
of each raw word; normals use Box-Muller on pairs of uniforms.
"""

import numpy as np

_MASK64 = (1 << 64) - 1
_TWO_PI = 2.0 * np.pi

PURPOSES = {"data": 0, "init": 1, "shuffle": 2, "probe": 3, "split": 4}


class RngStream:
    """Deterministic stream for one (seed, index) pair."""

    def __init__(self, master_seed: int, index: int = 0, purpose: str = "data"):
        if purpose not in PURPOSES:
            raise ValueError(f"unknown stream purpose: {purpose}")
        self.master_seed = int(master_seed)
        self.index = int(index)
        self.purpose = purpose
        counter = np.array([0, 0, 0, PURPOSES[purpose]], dtype=np.uint64)
        key = np.array([self.master_seed & _MASK64, self.index & _MASK64], dtype=np.uint64)
        self._bitgen = np.random.Philox(counter=counter, key=key)

    def __repr__(self):
        return f"RngStream(seed={self.master_seed}, index={self.index}, purpose={self.purpose!r})"

    def raw(self, size: int) -> np.ndarray:
        return np.asarray(self._bitgen.random_raw(size), dtype=np.uint64)

    def uniform(self, size=None, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        """Uniform draws on [low, high)."""
        shape = () if size is None else np.atleast_1d(size)
        count = int(np.prod(shape))
        u = (self.raw(count) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
        return (low + (high - low) * u).reshape(tuple(int(s) for s in shape))

    def normal(self, size=None) -> np.ndarray:
        shape = () if size is None else np.atleast_1d(size)
        count = int(np.prod(shape))
        pairs = (count + 1) // 2
        u = self.uniform(2 * pairs)
        # 1 - u lies in (0, 1], keeps the log finite
        r = np.sqrt(-2.0 * np.log(1.0 - u[:pairs]))
        theta = _TWO_PI * u[pairs:]
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:count]
        return z.reshape(tuple(int(s) for s in shape))

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        """Integers in [low, high]."""
        span = high - low + 1
        u = self.uniform(size)
        return np.minimum(low + np.floor(u * span).astype(np.int64), high)

    def permutation(self, n: int) -> np.ndarray:
        # stable argsort of uniforms, ties broken by position
        return np.argsort(self.uniform(n), kind="stable")
