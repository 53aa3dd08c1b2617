"""Discretised space-time white noise with counter-based streams.

Cell ``i`` of step ``k`` receives ``dW ~ N(0, dt * dx)``. Each stream is a
Philox4x64 block cipher keyed by a 64-bit stream id; the draws for step ``k``
start at cipher counter ``(0, k, 0, 0)``. A step's block is therefore a pure
function of ``(seed, counter, n_cells)`` and never overlaps another step's
block (a step would need 2**64 raw draws to carry into the next word).

Stream ids for ensemble members come from :func:`derive_stream`, which feeds
``(master_seed, trajectory_index)`` through numpy's ``SeedSequence`` hash.
``SeedSequence`` output is covered by numpy's stream-compatibility policy.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = ["NoiseGrid", "derive_seed", "derive_stream", "sample_increments"]

_MASK64 = (1 << 64) - 1


def derive_seed(master_seed: int, *keys: int) -> int:
    """Stable 64-bit child seed of ``master_seed`` along the path ``keys``."""
    ss = np.random.SeedSequence(entropy=int(master_seed) & _MASK64, spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, np.uint64)[0])


class NoiseGrid:
    """One trajectory's white-noise stream on ``n_cells`` periodic cells."""

    __slots__ = ("n_cells", "seed", "counter", "_bitgen", "_gen", "_key")

    def __init__(self, n_cells: int, seed: int, counter: int = 0):
        if n_cells < 1:
            raise ValueError("n_cells must be positive")
        self.n_cells = int(n_cells)
        self.seed = int(seed) & _MASK64
        self.counter = int(counter)
        self._key = np.array([self.seed, 0], dtype=np.uint64)
        self._bitgen = np.random.Philox(key=self._key)
        self._gen = np.random.Generator(self._bitgen)

    @property
    def dx(self) -> float:
        return 2 * math.pi / self.n_cells

    def __repr__(self):
        return f"NoiseGrid(n_cells={self.n_cells}, seed={self.seed}, counter={self.counter})"

    def __eq__(self, other):
        if not isinstance(other, NoiseGrid):
            return NotImplemented
        return (self.n_cells, self.seed, self.counter) == (other.n_cells, other.seed, other.counter)

    def __getstate__(self):
        return (self.n_cells, self.seed, self.counter)

    def __setstate__(self, state):
        self.__init__(*state)

    def copy(self) -> "NoiseGrid":
        return NoiseGrid(self.n_cells, self.seed, self.counter)

    def _standard_block(self, counter: int) -> np.ndarray:
        self._bitgen.state = {
            "bit_generator": "Philox",
            "state": {"counter": np.array([0, counter, 0, 0], dtype=np.uint64), "key": self._key},
            "buffer": np.zeros(4, dtype=np.uint64),
            "buffer_pos": 4,
            "has_uint32": 0,
            "uinteger": 0,
        }
        return self._gen.standard_normal(self.n_cells)

    def standard_normals(self) -> np.ndarray:
        """Unscaled N(0, 1) block for the current counter; advances the counter."""
        z = self._standard_block(self.counter)
        self.counter += 1
        return z

    def sample_increments(self, dt: float) -> np.ndarray:
        """Cell increments ``dW_i ~ N(0, dt * dx)`` for one step; advances the counter."""
        if not dt > 0:
            raise ValueError(f"dt must be positive (got {dt!r})")
        return self.standard_normals() * math.sqrt(dt * self.dx)

    def sample_block(self, dt: float, n_steps: int) -> np.ndarray:
        """``(n_steps, n_cells)`` array equal to ``n_steps`` successive increments."""
        return np.stack([self.sample_increments(dt) for _ in range(n_steps)])


def sample_increments(g: NoiseGrid, dt: float) -> np.ndarray:
    return g.sample_increments(dt)


def derive_stream(master_seed: int, trajectory_index: int, n_cells: int = 256) -> NoiseGrid:
    """Independent stream for ensemble member ``trajectory_index``."""
    if trajectory_index < 0:
        raise ValueError("trajectory_index must be >= 0")
    return NoiseGrid(n_cells, derive_seed(master_seed, trajectory_index))
