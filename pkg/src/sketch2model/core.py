"""Dense numeric primitives and the deterministic random stream.

All arrays are 64-bit float numpy arrays.  Randomness never touches system
entropy: every draw comes from a :class:`RandomStream`, which wraps numpy's
PCG64 bit generator seeded through ``SeedSequence``.  The stream contract is:

* uniform doubles in [0, 1) come straight from ``Generator.random``;
* Gaussians are produced by the Box-Muller transform on consecutive uniform
  pairs, with both outputs of each pair consumed (an odd request discards the
  final spare value, so a call for ``n`` values always advances the stream by
  ``2 * ceil(n / 2)`` uniforms);
* integer draws, permutations and subset selections are Fisher-Yates style
  constructions on top of uniform draws;
* child streams are derived by extending the ``SeedSequence`` spawn key, so
  parallel jobs never share state.

Identical (seed, call sequence) therefore reproduces identical values on any
platform shipping the same numpy PCG64 stream, which numpy guarantees.
"""

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def matmul(a, b):
    """Matrix product of two 2-D float64 arrays.

    Raises ShapeError naming both shapes when a.cols != b.rows.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError("matmul expects 2-D operands, got %s and %s" % (a.shape, b.shape))
    if a.shape[1] != b.shape[0]:
        raise ShapeError("cannot multiply %s by %s: inner dimensions differ" % (a.shape, b.shape))
    return a @ b


def check_finite(x, name="array"):
    """Validate that every entry of x is finite; returns x as float64."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("%s contains non-finite entries" % name)
    return x


class RandomStream:
    """Deterministic, splittable random stream.

    Parameters
    ----------
    seed : int
        64-bit unsigned root seed.
    _path : tuple of int
        Spawn-key path relative to the root; use :meth:`child` / :meth:`split`
        instead of passing this directly.
    """

    def __init__(self, seed, _path=()):
        self.seed = int(seed)
        self.path = tuple(int(p) for p in _path)
        self.position = 0
        seq = np.random.SeedSequence(self.seed, spawn_key=self.path)
        self._gen = np.random.Generator(np.random.PCG64(seq))

    def __repr__(self):
        return "RandomStream(seed=%d, path=%s, position=%d)" % (self.seed, self.path, self.position)

    def child(self, index):
        """Derive an independent child stream; deterministic in (seed, path, index)."""
        return RandomStream(self.seed, self.path + (int(index),))

    def split(self, n):
        """Derive n independent child streams."""
        return [self.child(i) for i in range(int(n))]

    def uniform(self, n):
        """n uniform doubles in [0, 1)."""
        n = int(n)
        self.position += n
        return self._gen.random(n)

    def gaussian(self, n):
        """n standard-normal draws via Box-Muller on uniform pairs.

        Consumes 2 * ceil(n / 2) uniforms; n = 0 yields an empty vector.
        """
        n = int(n)
        if n == 0:
            return np.empty(0, dtype=np.float64)
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs)
        u1 = 1.0 - u[0::2]  # (0, 1]: keeps log() finite
        u2 = u[1::2]
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        out = np.empty(2 * pairs, dtype=np.float64)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:n]

    def index(self, k):
        """One integer uniform on {0, ..., k-1}."""
        k = int(k)
        if k <= 0:
            raise ValueError("index() needs k >= 1, got %d" % k)
        u = self.uniform(1)[0]
        i = int(u * k)
        return min(i, k - 1)  # guards the measure-zero u == 1.0 rounding edge

    def permutation(self, n):
        """Fisher-Yates permutation of range(n); consumes n - 1 uniforms."""
        n = int(n)
        perm = np.arange(n)
        if n < 2:
            return perm
        u = self.uniform(n - 1)
        for i in range(n - 1, 0, -1):
            j = int(u[n - 1 - i] * (i + 1))
            j = min(j, i)
            perm[i], perm[j] = perm[j], perm[i]
        return perm

    def subset(self, n, k):
        """k distinct indices from range(n), order deterministic; consumes k uniforms."""
        n = int(n)
        k = int(k)
        if k > n:
            raise ValueError("cannot draw %d distinct indices from %d" % (k, n))
        pool = np.arange(n)
        u = self.uniform(k)
        for i in range(k):
            j = i + int(u[i] * (n - i))
            j = min(j, n - 1)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k].copy()
