"""Reproducible, splittable random streams.

Every stochastic routine in the package takes an explicit
:class:`numpy.random.Generator`. Streams are derived from a master seed and a
tuple of labels (chain index, purpose, ...) through :class:`numpy.random.SeedSequence`
feeding a counter-based Philox bit generator, so two streams with different
labels never overlap and a given ``(seed, labels)`` pair always replays the
same draws, whatever order the chains are scheduled in.
"""

from __future__ import annotations

import zlib
from typing import Iterable, Union

import numpy as np

Label = Union[int, str]


def _label_to_int(label: Label) -> int:
    if isinstance(label, (int, np.integer)):
        if label < 0:
            raise ValueError(f"integer stream labels must be non-negative, got {label}")
        return int(label)
    if isinstance(label, str):
        # crc32 is stable across interpreter runs, unlike hash()
        return zlib.crc32(label.encode("utf-8"))
    raise TypeError(f"stream labels must be int or str, got {type(label).__name__}")


def derive_stream(master_seed: int, labels: Iterable[Label] = ()) -> np.random.Generator:
    """Return an independent generator keyed on ``(master_seed, labels)``.

    Parameters
    ----------
    master_seed : int
        Non-negative run seed.
    labels : iterable of int or str
        Path identifying the consumer, e.g. ``(chain_index, "states")``.

    Returns
    -------
    numpy.random.Generator
        Philox-backed generator. It offers ``random``, ``normal``, ``gamma``,
        ``poisson`` and ``binomial`` directly; use :func:`categorical` for
        draws from a probability vector.
    """
    key = tuple(_label_to_int(lab) for lab in labels)
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(seq))


def as_generator(random_state) -> np.random.Generator:
    """Coerce ``None``, an int seed or a Generator to a Generator."""
    if isinstance(random_state, np.random.Generator):
        return random_state
    if random_state is None:
        return np.random.Generator(np.random.Philox())
    if isinstance(random_state, (int, np.integer)):
        return derive_stream(int(random_state))
    raise TypeError(f"cannot build a Generator from {random_state!r}")


def _last_positive(probs) -> int:
    return int(np.flatnonzero(np.asarray(probs) > 0)[-1])


def categorical(rng: np.random.Generator, probs: np.ndarray) -> int:
    """Draw one index with probability proportional to ``probs``.

    ``probs`` need not be normalized but must be non-negative with a positive
    sum. Uses a single uniform and inverse-CDF lookup.
    """
    cdf = np.cumsum(probs)
    total = cdf[-1]
    if not total > 0:
        raise ValueError("categorical weights must have a positive sum")
    idx = int(np.searchsorted(cdf, rng.random() * total, side="right"))
    # guard against u * total == total under rounding
    return min(idx, _last_positive(probs))


def categorical_many(rng: np.random.Generator, probs: np.ndarray, size: int) -> np.ndarray:
    """Draw ``size`` i.i.d. indices proportional to ``probs`` (multinomial resampling)."""
    cdf = np.cumsum(probs)
    total = cdf[-1]
    if not total > 0:
        raise ValueError("categorical weights must have a positive sum")
    idx = np.searchsorted(cdf, rng.random(size) * total, side="right")
    return np.minimum(idx, _last_positive(probs))
