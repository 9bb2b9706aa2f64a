"""Probability primitives, label checks and seeded random streams."""

from __future__ import annotations

import zlib

import numpy as np

# Log arguments are clamped to [EPS, 1 - EPS] so every loss stays finite.
EPS = 1e-12


class InvalidInput(ValueError):
    """Raised for non-finite logits or malformed label arguments."""


def stream(seed: int, name: str) -> np.random.Generator:
    """Counter-based (Philox) generator for the named purpose under `seed`.

    Each stochastic component draws from its own stream so that switching one
    component off never shifts the draws seen by another.
    """
    key = zlib.crc32(name.encode("utf-8"))
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(key,))
    return np.random.Generator(np.random.Philox(ss))


def check_logits(logits) -> np.ndarray:
    x = np.asarray(logits, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] < 2:
        raise InvalidInput(f"logits must have a class axis of length >= 2, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidInput("logits contain non-finite values")
    return x


def softmax(logits) -> np.ndarray:
    """Softmax over the last axis with max-subtraction.

    >>> softmax([0.0, np.log(3.0)])
    array([0.25, 0.75])
    """
    x = check_logits(logits)
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_excluding(logits: np.ndarray, drop: np.ndarray) -> np.ndarray:
    """Row-wise softmax over all classes except column ``drop[r]``.

    The dropped column is returned as 0.  Equals p_i / (1 - p_drop) but
    never forms the 0/0 that appears when p_drop saturates.
    """
    rows = np.arange(logits.shape[0])
    z = logits.copy()
    z[rows, drop] = -np.inf
    z -= z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def clamped_log(p) -> np.ndarray:
    return np.log(np.clip(p, EPS, 1.0 - EPS))


def argmax(values) -> np.ndarray:
    """Argmax over the last axis; ties go to the lowest index."""
    # np.argmax already returns the first occurrence of the maximum.
    return np.argmax(np.asarray(values), axis=-1)


def check_label(y, c: int) -> int:
    y = int(y)
    if not 0 <= y < c:
        raise InvalidInput(f"label {y} outside [0, {c})")
    return y


def sample_complementary_batch(given, c: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``k`` distinct complementary labels for each entry of ``given``.

    Returns an int array of shape (len(given), k).  Labels are uniform without
    replacement over the classes other than the given one.
    """
    given = np.asarray(given, dtype=np.int64)
    if not 1 <= k <= c - 1:
        raise InvalidInput(f"need 1 <= k <= c-1, got k={k}, c={c}")
    if given.size and (given.min() < 0 or given.max() >= c):
        raise InvalidInput("given labels outside [0, c)")
    n = given.shape[0]
    if k == 1:
        r = rng.integers(0, c - 1, size=n)
        return (r + (r >= given)).reshape(n, 1)
    keys = rng.random((n, c))
    keys[np.arange(n), given] = np.inf
    return np.argsort(keys, axis=1, kind="stable")[:, :k]


def sample_complementary(given: int, c: int, k: int, rng: np.random.Generator) -> frozenset:
    given = check_label(given, c)
    return frozenset(int(v) for v in sample_complementary_batch([given], c, k, rng)[0])
