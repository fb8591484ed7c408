"""Class-rebalanced sampling and person-order augmentation."""
from __future__ import annotations

from typing import Sequence

import numpy as np


def square_root_probabilities(class_counts: Sequence[int]) -> np.ndarray:
    counts = np.asarray(class_counts, dtype=np.float64)
    if np.any(counts < 1):
        raise ValueError("every class needs at least one sample")
    w = np.sqrt(counts)
    return w / w.sum()


class SquareRootSampler:
    """Draws class ids with probability proportional to sqrt(class count)."""

    def __init__(self, class_counts: Sequence[int], rng: np.random.Generator):
        self.probabilities = square_root_probabilities(class_counts)
        self.rng = rng

    def draw(self, n: int) -> np.ndarray:
        return self.rng.choice(len(self.probabilities), size=n, p=self.probabilities)

    def __iter__(self):
        while True:
            yield int(self.draw(1)[0])


def square_root_class_sampler(class_counts: Sequence[int], rng: np.random.Generator):
    return iter(SquareRootSampler(class_counts, rng))


def random_person_permutations(n: int, persons: int, rng: np.random.Generator) -> np.ndarray:
    """(n, persons) independent uniform permutations."""
    return np.argsort(rng.random((n, persons)), axis=1)


def permute_batch(flat: np.ndarray, perms: np.ndarray) -> np.ndarray:
    """Applies one person permutation per sample of an (N, P, ...) batch."""
    return np.take_along_axis(flat, perms.reshape(perms.shape + (1,) * (flat.ndim - 2)), axis=1)
