"""Indexed binary min-heap of per-voxel next-event times.

The heap is stored in three flat arrays so that the same functions run inside
numba-compiled event loops: ``heap[i]`` is the voxel at heap slot ``i``,
``pos[v]`` is the slot of voxel ``v`` and ``keys[v]`` its next-event time.
Every voxel is present exactly once; idle voxels carry ``inf``.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def sift_up(heap, pos, keys, i):
    v = heap[i]
    k = keys[v]
    while i > 0:
        parent = (i - 1) >> 1
        pv = heap[parent]
        if keys[pv] <= k:
            break
        heap[i] = pv
        pos[pv] = i
        i = parent
    heap[i] = v
    pos[v] = i


@njit(cache=True, nogil=True)
def sift_down(heap, pos, keys, i):
    n = heap.shape[0]
    v = heap[i]
    k = keys[v]
    while True:
        child = 2 * i + 1
        if child >= n:
            break
        right = child + 1
        if right < n and keys[heap[right]] < keys[heap[child]]:
            child = right
        cv = heap[child]
        if keys[cv] >= k:
            break
        heap[i] = cv
        pos[cv] = i
        i = child
    heap[i] = v
    pos[v] = i


@njit(cache=True, nogil=True)
def update_key(heap, pos, keys, v, new_key):
    old = keys[v]
    keys[v] = new_key
    if new_key < old:
        sift_up(heap, pos, keys, pos[v])
    elif new_key > old:
        sift_down(heap, pos, keys, pos[v])


@njit(cache=True, nogil=True)
def heapify(heap, pos, keys):
    n = heap.shape[0]
    for i in range(n):
        heap[i] = i
        pos[i] = i
    for i in range(n // 2 - 1, -1, -1):
        sift_down(heap, pos, keys, i)


class EventQueue:
    """Python handle on the heap arrays, used for setup and inspection."""

    def __init__(self, keys: np.ndarray):
        self.keys = np.asarray(keys, dtype=np.float64)
        n = self.keys.shape[0]
        self.heap = np.empty(n, dtype=np.int64)
        self.pos = np.empty(n, dtype=np.int64)
        heapify(self.heap, self.pos, self.keys)

    def __len__(self) -> int:
        return self.heap.shape[0]

    def peek(self) -> tuple[int, float]:
        v = int(self.heap[0])
        return v, float(self.keys[v])

    def update(self, voxel: int, key: float) -> None:
        update_key(self.heap, self.pos, self.keys, voxel, key)

    def check(self) -> bool:
        """Heap property plus consistency of the position index."""
        heap, pos, keys = self.heap, self.pos, self.keys
        n = heap.shape[0]
        if sorted(heap.tolist()) != list(range(n)):
            return False
        for i in range(n):
            if pos[heap[i]] != i:
                return False
            for c in (2 * i + 1, 2 * i + 2):
                if c < n and keys[heap[c]] < keys[heap[i]]:
                    return False
        return True
