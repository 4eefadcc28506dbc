"""Counter-based 64-bit generator used for every minibatch draw.

A draw is addressed by ``(seed, stream, counter)``; nothing is stateful, so
draw ``d`` of an estimator can be regenerated without replaying draws
``0..d-1``. The construction is the SplitMix64 finalizer applied twice::

    key   = mix(seed + GOLDEN * (stream + 1))
    value = mix(key + GOLDEN * (counter + 1))
    mix(z): z ^= z >> 30; z *= 0xBF58476D1CE4E5B9
            z ^= z >> 27; z *= 0x94D049BB133111EB
            z ^= z >> 31            (all arithmetic mod 2**64)

Uniform floats are ``(value >> 11) * 2**-53``; an integer below ``r`` is
``floor(uniform * r)``.

Minibatch pair ``d`` of an estimator draws its row subset from stream ``2d``
and its column subset from stream ``2d + 1``; within a stream, counter ``j``
feeds step ``j`` of a Fisher-Yates shuffle truncated after ``m`` steps.
"""

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix(z: np.ndarray) -> np.ndarray:
    z = z ^ (z >> np.uint64(30))
    z = z * _M1
    z = z ^ (z >> np.uint64(27))
    z = z * _M2
    return z ^ (z >> np.uint64(31))


def random_u64(seed: int, stream, counter) -> np.ndarray:
    """Vectorized over broadcastable ``stream`` and ``counter`` arrays."""
    with np.errstate(over="ignore"):
        s = np.asarray(stream, dtype=np.uint64)
        c = np.asarray(counter, dtype=np.uint64)
        key = _mix(np.uint64(int(seed) & MASK64) + np.uint64(GOLDEN) * (s + np.uint64(1)))
        return _mix(key + np.uint64(GOLDEN) * (c + np.uint64(1)))


def random_uniform(seed: int, stream, counter) -> np.ndarray:
    u = random_u64(seed, stream, counter)
    return (u >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def derive_seed(seed: int, counter: int, stream: int = 0xF10) -> int:
    """A fresh 64-bit seed for iteration ``counter`` of a seeded procedure."""
    return int(random_u64(seed, stream, counter))


def sample_subsets(n: int, m: int, seed: int, streams) -> np.ndarray:
    """One m-subset of ``range(n)`` per stream, as rows of an int array.

    Each row is the first ``m`` entries of a Fisher-Yates shuffle, so entries
    are distinct and every m-subset is equally likely.
    """
    streams = np.atleast_1d(np.asarray(streams, dtype=np.uint64))
    k = streams.size
    perm = np.tile(np.arange(n, dtype=np.int64), (k, 1))
    rows = np.arange(k)
    u = random_uniform(seed, streams[:, None], np.arange(m, dtype=np.uint64)[None, :])
    for j in range(m):
        r = j + np.minimum((u[:, j] * (n - j)).astype(np.int64), n - j - 1)
        tmp = perm[rows, j].copy()
        perm[rows, j] = perm[rows, r]
        perm[rows, r] = tmp
    return perm[:, :m]


def sample_pairs(n_x: int, n_y: int, m: int, k: int, seed: int, first_draw: int = 0):
    """Index tuples ``(I, J)`` for draws ``first_draw .. first_draw + k - 1``."""
    d = np.arange(first_draw, first_draw + k, dtype=np.uint64)
    I = sample_subsets(n_x, m, seed, np.uint64(2) * d)
    J = sample_subsets(n_y, m, seed, np.uint64(2) * d + np.uint64(1))
    return I, J
