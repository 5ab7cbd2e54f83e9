"""Shuffle-once mini-batch sampling without replacement."""
from __future__ import annotations

import numpy as np

from .linalg import RngStream


class PermutationCursor:
    """Walks a single random permutation of ``indices`` in chunks of ``b``.

    Every index is emitted exactly once. The last batch is shorter when ``b``
    does not divide the number of indices; after that :meth:`next_batch`
    returns ``None``.
    """

    def __init__(self, indices, b: int, rng: RngStream):
        if b < 1:
            raise ValueError(f"batch size must be >= 1, got {b}")
        indices = np.asarray(indices, dtype=np.int64)
        if len(indices) == 0:
            raise ValueError("cursor needs at least one index")
        self.order = rng.permutation(indices)
        self.b = int(b)
        self.position = 0

    def __len__(self) -> int:
        return len(self.order)

    @property
    def exhausted(self) -> bool:
        return self.position >= len(self.order)

    @property
    def remaining_batches(self) -> int:
        left = len(self.order) - self.position
        return -(-left // self.b)

    def peek(self) -> np.ndarray | None:
        if self.exhausted:
            return None
        return self.order[self.position:self.position + self.b]

    def next_batch(self) -> np.ndarray | None:
        batch = self.peek()
        if batch is not None:
            self.position += len(batch)
        return batch

    def __iter__(self):
        while (batch := self.next_batch()) is not None:
            yield batch


def new_cursor(indices, b: int, rng: RngStream) -> PermutationCursor:
    return PermutationCursor(indices, b, rng)


def next_batch(cursor: PermutationCursor) -> np.ndarray | None:
    return cursor.next_batch()
